//! Adaptation objectives for source-free fine-tuning.
//!
//! Everything here consumes graph nodes from [`autodiff`] so the trainer can
//! differentiate straight through. Three families:
//!
//! * information-maximization terms over slot probabilities ([`entropy`]),
//!   including an occupancy-weighted marginal that ignores empty slots;
//! * self-supervised auxiliaries ([`ssl`]): rotation discrimination with a
//!   stop-gradient reference branch, and InfoNCE over predicted future
//!   window embeddings;
//! * centroid pseudo-labels ([`pseudo`]): one init + one refinement round in
//!   an augmented feature space, then plain cross-entropy.
//!
//! Probability inputs are validated (rows sum to 1 within `1e-5`); violations
//! panic because they indicate bugs upstream, not bad data.

mod entropy;
mod pseudo;
mod ssl;

use thiserror::Error;

pub use entropy::{
    conditional_entropy_loss, im_multi, im_standard, occupancy_probability,
    occupancy_weighted_gent, shannon_entropy, standard_gent,
};
pub use pseudo::{pseudo_label_loss, pseudo_label_round};
pub use ssl::{cpc_loss, rotation_loss_multiuser, rotation_pair_loss};

/// Additive guard inside every `log` so one-hot rows stay finite.
pub const EPS_ENTROPY: f64 = 1e-5;
/// Below this total occupancy mass the weighted marginal is undefined and the
/// diversity term degrades to a constant zero (no gradient).
pub const EPS_OCCUPANCY_MASS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Arch(#[from] net_arch::ArchError),
}
