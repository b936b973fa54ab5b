//! Evaluation: error rates, noise sweeps, parameter recovery and result tables.

mod experiment;
mod metrics;
mod recovery;
mod table;

pub use experiment::{
    plan, run_experiment, CellPlan, CellRecord, DataSource, ExperimentSpec, ModelSpec, NoiseFamily, NoiseGrid,
    NoisePoint, Protocol, RepRecord, RunRecord, Timing, RUN_SCHEMA_VERSION,
};
pub use metrics::{error_rate, majority_baseline};
pub use recovery::{match_classes, recovery_report, RecoveryReport, RecoveryTruth};
pub use table::{emit_table, write_table, Table, TableFormat, TableRow};
