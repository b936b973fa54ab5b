use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use gmda::data::{empirical_flip_matrix, load_csv, read_csv, save_csv, CsvOptions, LabelColumn, LabelMap};
use gmda::em::{argmax, predict_posterior, FitConfig};
use gmda::eval::{self, DataSource, ExperimentSpec, RunRecord, TableFormat};
use gmda::{Dataset, NoiseSpec, SavedModel, Scaler, SynthSpec};
use serde_json::json;

use crate::{Cli, Command, CsvArgs, FitArgs, Format, InjectArgs, NoiseKindArg, DEFAULT_SEED};

/// Bad flag combinations detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, out, truth } => synth(cli, spec, out, truth.as_deref()),
        Command::Inject(args) => inject(cli, args),
        Command::Fit(args) => fit(cli, args),
        Command::Predict {
            model,
            data,
            out,
            csv,
            unlabeled,
        } => predict(model, data, out, csv, *unlabeled),
        Command::Experiment {
            spec,
            out_dir,
            dry_run,
            timings,
        } => experiment(cli, spec, out_dir, *dry_run, timings.as_deref()),
        Command::Report { record, format, out } => report(record, *format, out.as_deref()),
    }
}

/// The seed to use: `--seed`, else the value from the input document, else the default.
fn resolve_seed(cli: &Cli, from_input: Option<u64>) -> u64 {
    match (cli.seed, from_input) {
        (Some(s), _) => s,
        (None, Some(s)) => {
            println!("seed: {s} (from input)");
            s
        }
        (None, None) => {
            println!("seed: {DEFAULT_SEED} (default)");
            DEFAULT_SEED
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_options(args: &CsvArgs, labeled: bool) -> CsvOptions {
    CsvOptions {
        label_column: labeled.then(|| args.label_column.parse::<LabelColumn>().expect("infallible")),
        has_header: !args.no_header,
    }
}

fn load_labeled(path: &Path, args: &CsvArgs) -> Result<(Dataset, LabelMap)> {
    load_csv(path, &csv_options(args, true)).with_context(|| format!("loading {}", path.display()))
}

fn fmt_row(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn synth(cli: &Cli, spec_path: &Path, out: &Path, truth_path: Option<&Path>) -> Result<()> {
    let mut spec: SynthSpec = read_json(spec_path)?;
    spec.seed = resolve_seed(cli, Some(spec.seed));
    let (ds, truth) = gmda::data::generate_with_truth(&spec)?;
    save_csv(&ds, out, None)?;
    if let Some(p) = truth_path {
        write_text(p, &serde_json::to_string_pretty(&truth)?)?;
    }
    println!(
        "wrote {} samples, {} features, {} classes to {}",
        ds.len(),
        ds.dim(),
        ds.class_count(),
        out.display()
    );
    Ok(())
}

fn class_index(map: &LabelMap, s: &str) -> Result<usize> {
    map.index_of(s)
        .or_else(|| s.parse::<usize>().ok().filter(|&i| i < map.len()))
        .ok_or_else(|| usage(format!("unknown class '{s}'")))
}

fn inject(cli: &Cli, args: &InjectArgs) -> Result<()> {
    let (ds, map) = load_labeled(&args.data, &args.csv)?;
    let clean = if ds.true_labels().is_some() {
        ds
    } else {
        ds.with_observed_as_true()
    };
    let k = clean.class_count();
    let spec = match &args.noise_spec {
        Some(path) => {
            let mut spec: NoiseSpec = read_json(path)?;
            spec.seed = resolve_seed(cli, Some(spec.seed));
            spec
        }
        None => {
            let rate = args.rate.expect("clap enforces --rate");
            let seed = resolve_seed(cli, None);
            match args.kind {
                NoiseKindArg::Symmetric => NoiseSpec::symmetric(rate, seed),
                NoiseKindArg::Cyclic => NoiseSpec::cyclic(k, rate, seed)?,
                NoiseKindArg::Directed => {
                    let (Some(from), Some(to)) = (&args.from, &args.to) else {
                        return Err(usage("directed noise needs --from and --to"));
                    };
                    NoiseSpec::directed(k, class_index(&map, from)?, class_index(&map, to)?, rate, seed)?
                }
            }
        }
    };
    spec.validate(k)?;
    let noisy = gmda::data::inject_noise(&clean, &spec)?;
    save_csv(&noisy, &args.out, Some(&map))?;
    let truth = noisy.true_labels().expect("kept");
    let flipped = eval::error_rate(noisy.observed_labels(), truth)?;
    println!("flipped {:.2}% of {} labels", 100.0 * flipped, noisy.len());
    for (t, row) in empirical_flip_matrix(truth, noisy.observed_labels(), k)
        .iter()
        .enumerate()
    {
        println!("  {:>8} -> {}", map.name(t).unwrap_or("?"), fmt_row(row));
    }
    Ok(())
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let components = match (args.single_gaussian, args.components) {
        (true, Some(m)) if m != 1 => return Err(usage("--single-gaussian conflicts with --components")),
        (true, _) => 1,
        (false, m) => m.unwrap_or(2),
    };
    let config = FitConfig {
        max_iters: args.max_iters,
        rel_tol: args.tol,
        ridge: args.ridge,
        seed: resolve_seed(cli, None),
        gamma_diag_init: args.gamma_init,
        check_monotonic: true,
    };
    config.validate()?;
    let (ds, map) = load_labeled(&args.train, &args.csv)?;
    let (train, scaler) = if args.no_standardize {
        (ds, None)
    } else {
        let scaler = Scaler::fit(&ds);
        (scaler.transform(&ds)?, Some(scaler))
    };
    let start = Instant::now();
    let report = if args.single_gaussian {
        gmda::fit_single_gaussian(&train, &config)?
    } else {
        gmda::fit(&train, components, &config)?
    };
    let elapsed = start.elapsed().as_secs_f64();
    let saved = SavedModel::new(&report.final_params, scaler, Some(map.clone()));
    write_text(&args.model, &saved.to_json()?)?;
    if let Some(p) = &args.report {
        write_text(p, &serde_json::to_string_pretty(&report.to_doc())?)?;
    }
    println!(
        "{} after {} iterations in {elapsed:.3}s, log-likelihood {:.6}",
        if report.converged { "converged" } else { "stopped" },
        report.iterations_run,
        report.final_loglik()
    );
    let p = &report.final_params;
    println!("class priors: {}", fmt_row(p.pi()));
    println!("flip matrix p(observed | true), rows observed:");
    for (o, row) in p.gamma().rows().iter().enumerate() {
        println!("  {:>8} {}", map.name(o).unwrap_or("?"), fmt_row(row));
    }
    if !report.revivals.is_empty() {
        println!("revived {} empty components", report.revivals.len());
    }
    Ok(())
}

fn predict(model_path: &Path, data: &Path, out: &Path, csv_args: &CsvArgs, unlabeled: bool) -> Result<()> {
    let text = fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let saved = SavedModel::from_json(&text).with_context(|| format!("parsing {}", model_path.display()))?;
    let params = saved.params()?;
    let map = saved.labels.clone().unwrap_or_else(|| LabelMap::identity(params.k()));
    let file = fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let table = read_csv(file, &csv_options(csv_args, !unlabeled))?;
    let n = table.len();
    let d = table.dim;
    let posteriors: Vec<Vec<f64>> = gmda::par::map_indexed(n, |i| {
        let row = &table.features[i * d..(i + 1) * d];
        let x = match &saved.scaler {
            Some(s) => s.transform_row(row),
            None => row.to_vec(),
        };
        predict_posterior(&x, &params)
    })
    .into_iter()
    .collect::<gmda::Result<_>>()?;

    let mut w = csv::Writer::from_path(out).with_context(|| format!("writing {}", out.display()))?;
    let mut header: Vec<String> = (0..params.k())
        .map(|c| format!("p_{}", map.name(c).unwrap_or("?")))
        .collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut predicted = Vec::with_capacity(n);
    for post in &posteriors {
        let label = argmax(post);
        predicted.push(label);
        let mut rec: Vec<String> = post.iter().map(|p| format!("{p:?}")).collect();
        rec.push(map.name(label).unwrap_or("?").to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {n} predictions to {}", out.display());

    let reference = table.true_labels.as_ref().or(table.labels.as_ref());
    if let Some(reference) = reference {
        let known: Vec<(usize, usize)> = reference
            .iter()
            .zip(&predicted)
            .filter_map(|(name, &p)| map.index_of(name).map(|r| (p, r)))
            .collect();
        if known.len() < n {
            log::warn!("{} rows carry labels the model has never seen", n - known.len());
        }
        if !known.is_empty() {
            let (p, r): (Vec<usize>, Vec<usize>) = known.into_iter().unzip();
            let which = if table.true_labels.is_some() { "true" } else { "given" };
            println!("error rate against {which} labels: {:.4}", eval::error_rate(&p, &r)?);
        }
    }
    Ok(())
}

/// Resolves a relative CSV source path against the spec file's directory.
fn resolve_source(spec: &mut ExperimentSpec, spec_path: &Path) {
    if let DataSource::Csv { path, .. } = &mut spec.source {
        if path.is_relative() {
            if let Some(dir) = spec_path.parent() {
                *path = dir.join(&*path);
            }
        }
    }
}

fn experiment(cli: &Cli, spec_path: &Path, out_dir: &Path, dry_run: bool, timings: Option<&Path>) -> Result<()> {
    let mut spec: ExperimentSpec = read_json(spec_path)?;
    spec.base_seed = resolve_seed(cli, Some(spec.base_seed));
    let plan = eval::plan(&spec)?;
    if dry_run {
        println!(
            "{} cells x {} repetitions = {} fits",
            plan.len(),
            spec.repetitions,
            plan.len() * spec.repetitions
        );
        for cell in &plan {
            println!(
                "cell {:>3}: {} rate {} | {} | fold {} | fit seeds {:?}",
                cell.index,
                cell.noise.family.label(),
                cell.noise.rate,
                cell.model.label(),
                cell.fold,
                cell.fit_seeds
            );
        }
        return Ok(());
    }
    let mut resolved = spec.clone();
    resolve_source(&mut resolved, spec_path);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let start = Instant::now();
    let mut record = eval::run_experiment(&resolved)?;
    let elapsed = start.elapsed().as_secs_f64();
    // echo the spec as written so the record does not depend on the working directory
    record.spec = spec;

    let path = |name: &str| -> PathBuf { out_dir.join(name) };
    write_text(&path("record.json"), &record.to_json()?)?;
    for (name, format) in [
        ("table.csv", TableFormat::Csv),
        ("table.json", TableFormat::Json),
        ("table.md", TableFormat::Markdown),
    ] {
        eval::write_table(&record, format, path(name))?;
    }
    let recovery = recovery_summary(&record);
    if !recovery.is_empty() {
        write_text(&path("recovery.json"), &serde_json::to_string_pretty(&recovery)?)?;
    }
    if let Some(t) = timings {
        write_text(t, &serde_json::to_string_pretty(&record.timings)?)?;
    }
    let failed: usize = record.cells.iter().map(|c| c.failed).sum();
    println!(
        "ran {} cells x {} repetitions in {elapsed:.2}s ({failed} failed runs)",
        record.cells.len(),
        record.spec.repetitions
    );
    print!("{}", eval::emit_table(&record, TableFormat::Markdown)?);
    Ok(())
}

fn mean_matrix(ms: &[&Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut acc = ms[0].iter().map(|r| vec![0.0; r.len()]).collect::<Vec<_>>();
    for m in ms {
        for (a, r) in acc.iter_mut().zip(m.iter()) {
            for (x, y) in a.iter_mut().zip(r) {
                *x += y / ms.len() as f64;
            }
        }
    }
    acc
}

/// Per-cell averages of the recovered flip matrix and priors next to the truth.
fn recovery_summary(record: &RunRecord) -> Vec<serde_json::Value> {
    record
        .cells
        .iter()
        .filter_map(|cell| {
            let reports: Vec<_> = cell.repetitions.iter().filter_map(|r| r.recovery.as_ref()).collect();
            let first = reports.first()?;
            let gammas: Vec<_> = reports.iter().map(|r| &r.gamma_fitted).collect();
            let mean_pi: Vec<f64> = (0..first.pi_fitted.len())
                .map(|j| reports.iter().map(|r| r.pi_fitted[j]).sum::<f64>() / reports.len() as f64)
                .collect();
            Some(json!({
                "cell": cell.index,
                "noise": cell.noise.family.label(),
                "rate": cell.noise.rate,
                "model": cell.model.label(),
                "fold": cell.fold,
                "runs": reports.len(),
                "gamma_fitted_mean": mean_matrix(&gammas),
                "gamma_truth": first.gamma_truth,
                "pi_fitted_mean": mean_pi,
                "pi_truth": first.pi_truth,
                "max_gamma_dev_mean": reports.iter().map(|r| r.max_gamma_dev).sum::<f64>() / reports.len() as f64,
                "max_pi_dev_mean": reports.iter().map(|r| r.max_pi_dev).sum::<f64>() / reports.len() as f64,
            }))
        })
        .collect()
}

fn report(record_path: &Path, format: Format, out: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(record_path).with_context(|| format!("reading {}", record_path.display()))?;
    let record = RunRecord::from_json(&text).with_context(|| format!("parsing {}", record_path.display()))?;
    let format = match format {
        Format::Csv => TableFormat::Csv,
        Format::Json => TableFormat::Json,
        Format::Markdown => TableFormat::Markdown,
    };
    let rendered = eval::emit_table(&record, format)?;
    match out {
        Some(p) => write_text(p, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
