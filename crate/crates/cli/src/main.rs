//! `gmda`: synthesize data, corrupt labels, fit and apply noise-robust
//! Gaussian mixture classifiers, and run noise-rate sweeps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(
    name = "gmda",
    version,
    about = "Label-noise-robust Gaussian mixture discriminant analysis"
)]
pub struct Cli {
    /// Random seed; printed when defaulted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel sections. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// error, warn, info, debug or trace. Overrides GMDA_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from a JSON recipe.
    Synth {
        spec: PathBuf,
        out: PathBuf,
        /// Also write the generating parameters as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Corrupt the labels of a dataset. The original labels are kept in a
    /// `true_label` column.
    Inject(InjectArgs),
    /// Fit a model to (possibly noisy) training data.
    Fit(FitArgs),
    /// Write class posteriors and the predicted label for every row.
    Predict {
        model: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        csv: CsvArgs,
        /// Every column is a feature.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Run a noise-rate by model sweep and write the record and tables.
    Experiment {
        spec: PathBuf,
        out_dir: PathBuf,
        /// Print the cell plan without fitting anything.
        #[arg(long)]
        dry_run: bool,
        /// Write per-repetition wall times to this file.
        #[arg(long)]
        timings: Option<PathBuf>,
    },
    /// Render the error-rate table of a run record.
    Report {
        record: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

#[derive(Debug, Clone, Args)]
pub struct CsvArgs {
    /// Label column: zero-based index, header name, or `last`.
    #[arg(long, default_value = "last")]
    pub label_column: String,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseKindArg {
    Symmetric,
    Directed,
    Cyclic,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = NoiseKindArg::Symmetric)]
    pub kind: NoiseKindArg,
    #[arg(long, required_unless_present = "noise_spec")]
    pub rate: Option<f64>,
    /// Source class for directed noise (label name or index).
    #[arg(long)]
    pub from: Option<String>,
    /// Target class for directed noise (label name or index).
    #[arg(long)]
    pub to: Option<String>,
    /// Noise spec JSON; replaces --kind/--rate.
    #[arg(long, conflicts_with_all = ["rate", "from", "to"])]
    pub noise_spec: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub train: PathBuf,
    pub model: PathBuf,
    /// Mixture components per class [default: 2].
    #[arg(long, short = 'm')]
    pub components: Option<usize>,
    /// One Gaussian per class; same as `--components 1`.
    #[arg(long)]
    pub single_gaussian: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Relative log-likelihood change that ends the run.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Initial flip-matrix diagonal.
    #[arg(long, default_value_t = 0.8)]
    pub gamma_init: f64,
    /// Covariance ridge, relative to the mean variance.
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    /// Fit on raw features.
    #[arg(long)]
    pub no_standardize: bool,
    /// Write the log-likelihood trace and final parameters here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvArgs,
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("GMDA_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    builder.format_timestamp(None).init();
}

/// 2 for bad input or I/O, 1 for modeling and numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gmda::GmdaError>() {
            return if e.is_usage() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<commands::UsageError>() {
            return 2;
        }
    }
    1
}

fn error_name(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|c| c.downcast_ref::<gmda::GmdaError>().map(|e| e.name()))
        .unwrap_or_else(|| {
            if err.chain().any(|c| c.is::<commands::UsageError>()) {
                "UsageError"
            } else if err.chain().any(|c| c.is::<serde_json::Error>()) {
                "Json"
            } else if err.chain().any(|c| c.is::<std::io::Error>()) {
                "Io"
            } else {
                "Error"
            }
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_level.as_deref());
    if cli.threads == 0 {
        eprintln!("error: UsageError: --threads must be at least 1");
        return ExitCode::from(2);
    }
    match gmda::par::with_threads(cli.threads, || commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err:#}", error_name(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
