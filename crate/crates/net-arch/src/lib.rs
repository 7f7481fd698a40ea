//! Network architectures for multi-user and single-user CSI recognition.
//!
//! Four model pieces share a [`autodiff::ParamStore`] under distinct name
//! prefixes, so freezing, hashing, and checkpointing can address them
//! independently:
//!
//! - `MultiUserBackbone`: three conv blocks (conv -> batch norm -> leaky
//!   rectifier -> dropout) with global average pooling to a 128-dim feature.
//! - `SingleUserBackbone`: a residual CNN of the ResNet-18 topology with a
//!   single-channel stem.
//! - heads: linear bottleneck, multi-slot classifier, binary rotation head,
//!   plain activity classifier.
//! - `CpcStack`: per-window encoder, gated recurrent context, per-horizon
//!   linear predictors, and a shared projection for contrastive training on
//!   raw feature grids.
//!
//! Every `register` call draws its initial weights from a caller-seeded RNG
//! in a fixed order, so a seed pins the whole parameter vector bit-for-bit.
//! Checkpoints serialize parameters, buffers, architecture descriptor, and
//! seed, and round-trip bit-exactly.

mod backbone;
mod checkpoint;
mod cpc;
mod features;
mod heads;
mod init;
mod norm;
mod resnet;

pub use backbone::{ConvBackboneSpec, ConvBlockSpec, MultiUserBackbone};
pub use checkpoint::{load_checkpoint, param_hash, save_checkpoint, Checkpoint};
pub use cpc::{CpcEncoding, CpcSpec, CpcStack};
pub use features::{batch_features, rotate180, rotate180_var};
pub use heads::{ActivityClassifier, Bottleneck, LinearLayer, RotationHead, SlotClassifier};
pub use resnet::{ResNetSpec, SingleUserBackbone, StageSpec};

use thiserror::Error;

/// Batch-normalization epsilon and running-average momentum.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("shape: {0}")]
    Shape(String),

    #[error("sample too short: {windows} windows, need at least {needed}")]
    SampleTooShort { windows: usize, needed: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
