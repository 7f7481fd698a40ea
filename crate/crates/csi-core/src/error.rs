use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsiError {
    #[error("profile mismatch: {0}")]
    Profile(String),

    #[error("label set of size {given} exceeds {capacity} slots")]
    Capacity { given: usize, capacity: usize },

    #[error("sample {index} ({blob}): {reason}")]
    Sample {
        index: usize,
        blob: String,
        reason: String,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}
