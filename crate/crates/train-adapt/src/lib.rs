//! Source training and source-free adaptation loops.
//!
//! Two model families share the machinery: the multi-user slot model
//! (conv backbone -> bottleneck -> slot classifier, adapted with
//! occupancy-weighted information maximization plus a rotation auxiliary)
//! and the single-user model (residual backbone -> bottleneck -> activity
//! classifier, adapted with centroid pseudo-labels, IM, rotation, and an
//! optional CPC auxiliary).
//!
//! Contracts the loops enforce:
//! - the classifier is bit-identical before and after every adaptation
//!   entry point (hash-checked, frozen in the optimizer);
//! - adaptation receives an [`UnlabeledTargetSet`], a view that physically
//!   contains no labels — probe metrics come from a separate eval-only set;
//! - optimizer state is fresh at adaptation start and there is no
//!   learning-rate schedule;
//! - deterministic mode + fixed seed reproduce loss trajectories bit-exactly
//!   on one platform.
//!
//! Every run writes a directory: `config.json` snapshot, `epochs.jsonl`
//! (one record per epoch), `report.json`, and checkpoints in the net-arch
//! format.

mod adapt;
mod config;
mod data;
mod loopcore;
mod model;
mod run;
mod source;
mod ssl_pretrain;

pub use adapt::{adapt_multiuser, adapt_multiuser_with_cpc, adapt_singleuser, AdaptationReport};
pub use config::{OptimizerKind, TrainConfig};
pub use data::{ProbeSet, SealedLabels, UnlabeledTargetSet};
pub use model::{
    init_multiuser, init_singleuser, load_cpc, load_mu, load_su, MuArchitecture, MuStack,
    SuArchitecture, SuStack, CLASSIFIER_PREFIX,
};
pub use run::{EpochRecord, RunDir};
pub use source::{train_source_multiuser, train_source_singleuser, SourceArtifacts};
pub use ssl_pretrain::{pretrain_cpc, pretrain_rotation, CpcArtifacts, RotationArtifacts};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        value: f64,
    },
    #[error("checkpoint does not match expected architecture: {0}")]
    Checkpoint(String),
    #[error("frozen-parameter contract violated: {0}")]
    Frozen(String),
    #[error(transparent)]
    Arch(#[from] net_arch::ArchError),
    #[error(transparent)]
    Loss(#[from] adapt_losses::LossError),
    #[error(transparent)]
    Match(#[from] set_match::MatchError),
    #[error(transparent)]
    Metrics(#[from] eval_metrics::MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
