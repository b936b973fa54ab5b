use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::error_rate;
use super::recovery::{recovery_report, RecoveryReport, RecoveryTruth};
use crate::data::{
    generate_with_truth, inject_noise, kfold_indices, load_csv, split_indices, standardize, CsvOptions, Dataset,
    LabelColumn, NoiseSpec, SynthSpec, SynthTruth,
};
use crate::em::{fit, predict_labels, FitConfig};
use crate::error::{GmdaError, Result};
use crate::par::{self, derive_seed};

pub const RUN_SCHEMA_VERSION: u32 = 1;

const STREAM_DATA: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_FIT: u64 = 3;

fn seed_for(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(base, |s, &p| derive_seed(s, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Regenerated for every repetition with a seed derived from its own seed
    /// and the repetition index.
    Synth(SynthSpec),
    /// Loaded once. Without a `true_label` column the file labels are taken as clean.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default = "yes")]
        has_header: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    Symmetric,
    /// Class `from` relabeled as `to`.
    Directed {
        from: usize,
        to: usize,
    },
    /// Class `c` relabeled as `c + 1 mod K`.
    Cyclic,
}

impl NoiseFamily {
    pub fn label(&self) -> String {
        match self {
            NoiseFamily::Symmetric => "symmetric".into(),
            NoiseFamily::Directed { from, to } => format!("directed {from}->{to}"),
            NoiseFamily::Cyclic => "cyclic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    #[serde(flatten)]
    pub family: NoiseFamily,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    #[serde(flatten)]
    pub family: NoiseFamily,
    pub rate: f64,
}

impl NoisePoint {
    pub fn to_spec(&self, classes: usize, seed: u64) -> Result<NoiseSpec> {
        let spec = match self.family {
            NoiseFamily::Symmetric => NoiseSpec::symmetric(self.rate, seed),
            NoiseFamily::Directed { from, to } => NoiseSpec::directed(classes, from, to, self.rate, seed)?,
            NoiseFamily::Cyclic => NoiseSpec::cyclic(classes, self.rate, seed)?,
        };
        spec.validate(classes)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub components: usize,
    #[serde(default)]
    pub fit: FitConfig,
    /// Display name; defaults to `GMDA M=<components>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ModelSpec {
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("GMDA M={}", self.components))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    Split { train_fraction: f64 },
    Kfold { folds: usize },
}

impl Protocol {
    pub fn folds(&self) -> usize {
        match self {
            Protocol::Split { .. } => 1,
            Protocol::Kfold { folds } => *folds,
        }
    }
}

/// A noise-rate by model sweep over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Dataset name used in tables.
    #[serde(default)]
    pub name: String,
    pub source: DataSource,
    pub noise: Vec<NoiseGrid>,
    pub models: Vec<ModelSpec>,
    pub protocol: Protocol,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Standardize features with training-set statistics before fitting.
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GmdaError::SpecError(m.into()));
        if self.noise.iter().all(|g| g.rates.is_empty()) {
            return bad("noise grid is empty");
        }
        if self.models.is_empty() {
            return bad("model grid is empty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        for g in &self.noise {
            if g.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return bad("noise rates must lie in [0, 1]");
            }
        }
        for m in &self.models {
            if m.components == 0 {
                return bad("models need at least one component");
            }
            m.fit.validate().map_err(|e| GmdaError::SpecError(e.to_string()))?;
        }
        match self.protocol {
            Protocol::Split { train_fraction } if !(train_fraction > 0.0 && train_fraction < 1.0) => {
                return bad("train_fraction must lie in (0, 1)");
            }
            Protocol::Kfold { folds } if folds < 2 => return bad("kfold needs at least 2 folds"),
            _ => {}
        }
        if let DataSource::Synth(s) = &self.source {
            s.validate().map_err(|e| GmdaError::SpecError(e.to_string()))?;
        }
        Ok(())
    }

    pub fn noise_points(&self) -> Vec<NoisePoint> {
        self.noise
            .iter()
            .flat_map(|g| {
                g.rates.iter().map(|&rate| NoisePoint {
                    family: g.family.clone(),
                    rate,
                })
            })
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.noise_points().len() * self.models.len() * self.protocol.folds()
    }
}

/// One grid cell as scheduled, before any fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub index: usize,
    pub noise: NoisePoint,
    pub model: ModelSpec,
    pub fold: usize,
    /// Noise seed per repetition.
    pub noise_seeds: Vec<u64>,
    /// Fit seed per repetition.
    pub fit_seeds: Vec<u64>,
}

/// Cells in run order: noise point outermost, then model, then fold.
pub fn plan(spec: &ExperimentSpec) -> Result<Vec<CellPlan>> {
    spec.validate()?;
    let folds = spec.protocol.folds();
    let mut cells = Vec::with_capacity(spec.cell_count());
    for (p, noise) in spec.noise_points().into_iter().enumerate() {
        for model in &spec.models {
            for fold in 0..folds {
                let index = cells.len();
                let reps = 0..spec.repetitions as u64;
                cells.push(CellPlan {
                    index,
                    noise: noise.clone(),
                    model: model.clone(),
                    fold,
                    noise_seeds: reps
                        .clone()
                        .map(|r| seed_for(spec.base_seed, &[STREAM_NOISE, p as u64, fold as u64, r]))
                        .collect(),
                    fit_seeds: reps
                        .map(|r| seed_for(spec.base_seed, &[STREAM_FIT, index as u64, r]))
                        .collect(),
                });
            }
        }
    }
    Ok(cells)
}

/// Outcome of one repetition of one cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RepRecord {
    pub repetition: usize,
    #[serde(default)]
    pub error_rate: Option<f64>,
    /// Fraction of training labels the injected noise actually changed.
    #[serde(default)]
    pub realized_noise_rate: Option<f64>,
    /// Fitted flip matrix, `[observed][true]`.
    #[serde(default)]
    pub gamma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
    #[serde(default)]
    pub loglik_initial: Option<f64>,
    #[serde(default)]
    pub loglik_final: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub converged: Option<bool>,
    #[serde(default)]
    pub revivals: usize,
    #[serde(default)]
    pub recovery: Option<RecoveryReport>,
    /// Set when this repetition failed; the other fields are then empty.
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub noise: NoisePoint,
    pub model: ModelSpec,
    pub fold: usize,
    /// Mean over the repetitions that succeeded.
    pub mean_error_rate: Option<f64>,
    pub failed: usize,
    pub repetitions: Vec<RepRecord>,
}

/// Wall-clock cost of one repetition. Not part of the serialized record so
/// repeated runs stay byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cell: usize,
    pub repetition: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub spec: ExperimentSpec,
    pub cells: Vec<CellRecord>,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: Self = serde_json::from_str(text)?;
        if record.schema_version != RUN_SCHEMA_VERSION {
            return Err(GmdaError::SpecError(format!(
                "unsupported run record schema_version {}",
                record.schema_version
            )));
        }
        Ok(record)
    }
}

struct RepData {
    data: Dataset,
    truth: Option<SynthTruth>,
    /// `(train, test)` index sets per fold.
    folds: Vec<(Vec<usize>, Vec<usize>)>,
}

fn load_source(spec: &ExperimentSpec) -> Result<Option<Dataset>> {
    match &spec.source {
        DataSource::Synth(_) => Ok(None),
        DataSource::Csv {
            path,
            label_column,
            has_header,
        } => {
            let options = CsvOptions {
                label_column: Some(
                    label_column
                        .as_deref()
                        .map(|s| s.parse::<LabelColumn>().expect("infallible"))
                        .unwrap_or_default(),
                ),
                has_header: *has_header,
            };
            let (ds, _) = load_csv(path, &options)?;
            Ok(Some(if ds.true_labels().is_some() {
                ds
            } else {
                ds.with_observed_as_true()
            }))
        }
    }
}

fn prepare_rep(spec: &ExperimentSpec, loaded: Option<&Dataset>, rep: usize) -> Result<RepData> {
    let (data, truth) = match (&spec.source, loaded) {
        (DataSource::Synth(s), _) => {
            let mut s = s.clone();
            s.seed = seed_for(s.seed, &[STREAM_DATA, spec.base_seed, rep as u64]);
            let (ds, truth) = generate_with_truth(&s)?;
            (ds, Some(truth))
        }
        (_, Some(ds)) => (ds.clone(), None),
        (_, None) => unreachable!("csv sources are loaded up front"),
    };
    let split_seed = seed_for(spec.base_seed, &[STREAM_SPLIT, rep as u64]);
    let folds = match spec.protocol {
        Protocol::Split { train_fraction } => vec![split_indices(&data, train_fraction, split_seed)?],
        Protocol::Kfold { folds } => {
            let tests = kfold_indices(&data, folds, split_seed)?;
            let mut fold_of = vec![0; data.len()];
            for (f, idx) in tests.iter().enumerate() {
                for &i in idx {
                    fold_of[i] = f;
                }
            }
            tests
                .into_iter()
                .enumerate()
                .map(|(f, test)| ((0..data.len()).filter(|&i| fold_of[i] != f).collect(), test))
                .collect()
        }
    };
    Ok(RepData { data, truth, folds })
}

fn describe(e: &GmdaError) -> String {
    format!("{}: {e}", e.name())
}

fn run_rep(spec: &ExperimentSpec, cell: &CellPlan, rep: usize, data: &RepData) -> Result<RepRecord> {
    let k = data.data.class_count();
    let (train_idx, test_idx) = &data.folds[cell.fold];
    let train = data.data.subset(train_idx)?;
    let test = data.data.subset(test_idx)?;
    let noise = cell.noise.to_spec(k, cell.noise_seeds[rep])?;
    let noisy = inject_noise(&train, &noise)?;
    let realized = error_rate(noisy.observed_labels(), noisy.reference_labels())?;
    let (train, test, scaler) = if spec.standardize {
        let (a, b, s) = standardize(&noisy, &test)?;
        (a, b, Some(s))
    } else {
        (noisy, test, None)
    };
    let config = FitConfig {
        seed: cell.fit_seeds[rep],
        ..cell.model.fit.clone()
    };
    let report = fit(&train, cell.model.components, &config)?;
    let predicted = predict_labels(&test, &report.final_params)?;
    let err = error_rate(&predicted, test.reference_labels())?;
    let recovery = match &data.truth {
        Some(t) => Some(recovery_report(
            &report.final_params,
            scaler.as_ref(),
            &RecoveryTruth {
                flip_table: noise.flip_table(k),
                priors: t.priors.clone(),
                means: t.means.clone(),
            },
        )?),
        None => None,
    };
    Ok(RepRecord {
        repetition: rep,
        error_rate: Some(err),
        realized_noise_rate: Some(realized),
        gamma: Some(report.final_params.gamma().rows()),
        pi: Some(report.final_params.pi().to_vec()),
        loglik_initial: Some(report.loglik_trace[0]),
        loglik_final: Some(report.final_loglik()),
        iterations: Some(report.iterations_run),
        converged: Some(report.converged),
        revivals: report.revivals.len(),
        recovery,
        error: None,
    })
}

/// Runs every cell of the sweep.
///
/// Noise is injected into the training side only and test error is measured
/// against clean labels. Failures inside a cell are recorded on that cell's
/// repetitions; only an invalid spec or an unreadable source aborts the run.
/// Jobs run in parallel but every seed is fixed by the spec, so the record is
/// independent of scheduling and thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunRecord> {
    let cells = plan(spec)?;
    let loaded = load_source(spec)?;
    let reps: Vec<std::result::Result<RepData, String>> = par::map_indexed(spec.repetitions, |r| {
        prepare_rep(spec, loaded.as_ref(), r).map_err(|e| describe(&e))
    });

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let results = par::map_indexed(jobs.len(), |j| {
        let (c, r) = jobs[j];
        let start = Instant::now();
        let record = match &reps[r] {
            Ok(data) => run_rep(spec, &cells[c], r, data).unwrap_or_else(|e| {
                log::warn!("cell {c} repetition {r} failed: {e}");
                RepRecord {
                    repetition: r,
                    error: Some(describe(&e)),
                    ..Default::default()
                }
            }),
            Err(msg) => RepRecord {
                repetition: r,
                error: Some(msg.clone()),
                ..Default::default()
            },
        };
        (record, start.elapsed().as_secs_f64())
    });

    let mut timings = Vec::with_capacity(jobs.len());
    let mut per_cell: Vec<Vec<RepRecord>> = vec![Vec::with_capacity(spec.repetitions); cells.len()];
    for (&(c, r), (record, seconds)) in jobs.iter().zip(results) {
        timings.push(Timing {
            cell: c,
            repetition: r,
            seconds,
        });
        per_cell[c].push(record);
    }
    let cells = cells
        .into_iter()
        .zip(per_cell)
        .map(|(plan, repetitions)| {
            let ok: Vec<f64> = repetitions.iter().filter_map(|r| r.error_rate).collect();
            CellRecord {
                index: plan.index,
                noise: plan.noise,
                model: plan.model,
                fold: plan.fold,
                mean_error_rate: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                failed: repetitions.len() - ok.len(),
                repetitions,
            }
        })
        .collect();
    Ok(RunRecord {
        schema_version: RUN_SCHEMA_VERSION,
        spec: spec.clone(),
        cells,
        timings,
    })
}
