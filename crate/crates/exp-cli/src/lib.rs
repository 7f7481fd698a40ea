//! Experiment harness behind the `shotfi` binary: synthetic benchmark
//! generation, seed sweeps over source training + adaptation, metric
//! persistence, and table/plot emission.
//!
//! Layout of an experiment output directory (`run --out <dir>`):
//!
//! ```text
//! <dir>/data/<scenario>/{source,target}/manifest.json   shared dataset
//! <dir>/source/<scenario>/seed<N>/source.ckpt           cached per seed
//! <dir>/source/<scenario>/seed<N>/{rotation,cpc}/       cached pretexts
//! <dir>/runs/<scenario>/<method>/seed<N>/               one cell per run
//! <dir>/runs/<scenario>/failures/seed<N>.json           recorded aborts
//! ```
//!
//! Every cell persists `metrics.json` (the evaluation report wrapped with
//! its scenario/method/seed coordinates); adaptation cells additionally
//! carry the trainer's `config.json` / `epochs.jsonl` / `report.json` and
//! checkpoints. In deterministic mode the spec and seed fully determine
//! these contents, and `report` is a pure function of the run directories.

pub mod aggregate;
pub mod dataset;
pub mod pipeline;
pub mod plots;
pub mod report;
pub mod spec;

use thiserror::Error;

/// Harness failure split by exit code: configuration problems exit 2, run
/// failures exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run error: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(format!("json: {e}"))
    }
}

impl From<train_adapt::TrainError> for CliError {
    fn from(e: train_adapt::TrainError) -> Self {
        match e {
            train_adapt::TrainError::Config(msg) => CliError::Config(msg),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<csi_core::CsiError> for CliError {
    fn from(e: csi_core::CsiError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<eval_metrics::MetricsError> for CliError {
    fn from(e: eval_metrics::MetricsError) -> Self {
        CliError::Run(e.to_string())
    }
}

pub use aggregate::{aggregate, mean_std, scan_runs, Aggregate, CellReport, ReportKind};
pub use dataset::gen_synthetic;
pub use pipeline::{run_experiment, CellSummary, RunOutcome, SeedFailure};
pub use report::{report_command, ReportFormat};
pub use spec::{ExperimentSpec, Method, Scenario};
