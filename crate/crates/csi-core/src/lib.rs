//! Core data model for Wi-Fi channel state information (CSI) sensing:
//! raw complex CSI blocks, preprocessed feature grids, padded multi-person
//! label vectors, and a manifest-based on-disk dataset format.
//!
//! Two preprocessing pipelines are provided:
//! * amplitude flattening, for datasets exposing dense MIMO CSI
//!   (time x rx x tx x subcarrier) where the model consumes |H|;
//! * per-receiver antenna phase ratio, for datasets where phase offsets
//!   between co-located antennas carry the motion signal.
//!
//! The canonical in-memory feature layout is `(1, F, T)`: one channel, F
//! feature rows, T time steps. Amplitude-profile files store `(1, T, F)`
//! (time-major, as produced by the flattening step) and are transposed when
//! converted to [`Sample`]s.

mod error;
mod manifest;
mod preprocess;
mod types;

pub use error::CsiError;
pub use manifest::{
    load_dataset, write_dataset, Dataset, Payload, Profile, StoredSample,
};
pub use preprocess::{
    amplitude_flatten, amplitude_preprocess, phase_ratio_preprocess, to_canonical_features,
};
pub use types::{
    pad_label_set, CsiTensor, DomainDescriptor, PaddedLabelVector, PreprocessQuality, Sample,
    SlotLabel, Split,
};
