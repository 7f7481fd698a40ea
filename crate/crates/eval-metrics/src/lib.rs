//! Permutation-invariant multi-user metrics plus the standard single-user
//! suite.
//!
//! Slot order is meaningless on both sides of a multi-user prediction, so
//! every metric first aligns predicted slots to ground-truth slots with the
//! same minimum-cost assignment used for training (negative log probability
//! of the truth class). Scores are then ordinary per-slot comparisons of the
//! aligned pair, which makes each metric invariant to shuffling either side.
//!
//! Reports serialize to JSON and to a small per-class CSV table.

mod multi;
mod single;

use thiserror::Error;

pub use multi::{
    activity_f1, align, exact_match, metric_report, occupancy_metrics, slot_accuracy,
    MetricReport,
};
pub use single::{single_user_metrics, SingleUserReport};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Match(#[from] set_match::MatchError),
    #[error(transparent)]
    Label(#[from] csi_core::CsiError),
}
