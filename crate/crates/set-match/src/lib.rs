//! Slot-to-label assignment for set prediction.
//!
//! A multi-user sample is a label *multiset*, so slot order in both the
//! prediction and the padded ground truth carries no meaning. Supervision
//! therefore runs through an optimal bipartite matching: build a cost matrix
//! of negative log-probabilities, solve the assignment exactly, then score
//! cross-entropy against the matched targets. The permutation is
//! piecewise-constant in the logits and is treated as a constant during
//! differentiation; gradients flow only through the matched CE term.

mod hungarian;
mod matched_ce;

pub use hungarian::hungarian;
pub use matched_ce::{build_cost_matrix, matched_cross_entropy, EPS_LOG};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("shape: {0}")]
    Shape(String),

    #[error("invalid probabilities: {0}")]
    Probability(String),

    #[error("smoothing must lie in [0, 1), got {0}")]
    Smoothing(f64),

    #[error(transparent)]
    Label(#[from] csi_core::CsiError),
}
