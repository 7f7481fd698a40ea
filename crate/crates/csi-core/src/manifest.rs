//! On-disk dataset format: a JSON manifest plus one raw little-endian binary
//! blob per sample.
//!
//! Two payload kinds exist. `f32` blobs hold preprocessed feature grids in
//! the profile's disk layout; `c64` blobs hold raw complex CSI as interleaved
//! (re, im) f32 pairs, row-major over (T, N_r, N_t, N_sc). Because `c64`
//! storage is f32-precision, [`write_dataset`] refuses raw tensors that are
//! not exactly representable at f32 (see [`CsiTensor::quantize_c64`]); with
//! that rule, write-then-read reproduces a dataset bit-exactly.

use crate::preprocess::{amplitude_flatten, to_canonical_features};
use crate::{CsiError, CsiTensor, DomainDescriptor, PaddedLabelVector, Sample, Split};
use ndarray::{Array3, Array4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "wimans-amp")]
    WimansAmp,
    #[serde(rename = "widar-phase-ratio")]
    WidarPhaseRatio,
    #[serde(rename = "synthetic")]
    Synthetic,
}

/// Stored payload of one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Preprocessed features in the profile's disk layout (`(1, T, F)` for
    /// the amplitude profile, `(1, F, T)` for the phase-ratio profile).
    Features(Array3<f32>),
    /// Raw complex CSI; values must be f32-representable.
    RawCsi(CsiTensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredSample {
    pub payload: Payload,
    pub labels: PaddedLabelVector,
    pub environment_id: String,
    pub carrier_hz: f64,
}

/// A full dataset: header plus samples, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub profile: Profile,
    /// Number of activity classes; label value `k` encodes "no person".
    pub k: usize,
    /// Slot count of the padded label vectors.
    pub m: usize,
    pub split: Split,
    /// When set, labels exist for evaluation only; adaptation must not read
    /// them.
    pub labels_eval_only: bool,
    pub sample_rate_hz: f64,
    pub samples: Vec<StoredSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSampleDoc {
    blob: String,
    shape: Vec<usize>,
    dtype: String,
    labels: Vec<usize>,
    occupancy: usize,
    environment_id: String,
    carrier_hz: f64,
    checksum_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    profile: Profile,
    k: usize,
    m: usize,
    split: String,
    labels_eval_only: bool,
    sample_rate_hz: f64,
    samples: Vec<ManifestSampleDoc>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn f32_le_bytes(values: impl Iterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn payload_bytes(payload: &Payload) -> Result<(Vec<u8>, Vec<usize>, &'static str), CsiError> {
    match payload {
        Payload::Features(a) => {
            let mut buf = Vec::with_capacity(a.len() * 4);
            f32_le_bytes(a.as_standard_layout().iter().copied(), &mut buf);
            Ok((buf, a.shape().to_vec(), "f32"))
        }
        Payload::RawCsi(t) => {
            let mut buf = Vec::with_capacity(t.values.len() * 8);
            for c in t.values.as_standard_layout().iter() {
                if c.re as f32 as f64 != c.re || c.im as f32 as f64 != c.im {
                    return Err(CsiError::Manifest(
                        "raw CSI tensor is not quantized to complex64 precision; \
                         call quantize_c64 before writing"
                            .into(),
                    ));
                }
                buf.extend_from_slice(&(c.re as f32).to_le_bytes());
                buf.extend_from_slice(&(c.im as f32).to_le_bytes());
            }
            Ok((buf, t.values.shape().to_vec(), "c64"))
        }
    }
}

/// Write `dataset` into `dir` (created if needed). Returns the manifest path
/// (`dir/manifest.json`); blobs are written alongside it.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, CsiError> {
    fs::create_dir_all(dir)?;
    let mut docs = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.labels.m() != dataset.m {
            return Err(CsiError::Manifest(format!(
                "sample {i}: label vector has {} slots, dataset declares {}",
                s.labels.m(),
                dataset.m
            )));
        }
        let (bytes, shape, dtype) = payload_bytes(&s.payload)?;
        let blob = format!("sample_{i:06}.bin");
        fs::write(dir.join(&blob), &bytes)?;
        docs.push(ManifestSampleDoc {
            blob,
            shape,
            dtype: dtype.to_string(),
            labels: s.labels.to_class_indices(dataset.k)?,
            occupancy: s.labels.occupancy(),
            environment_id: s.environment_id.clone(),
            carrier_hz: s.carrier_hz,
            checksum_sha256: sha256_hex(&bytes),
        });
    }
    let doc = ManifestDoc {
        profile: dataset.profile,
        k: dataset.k,
        m: dataset.m,
        split: match dataset.split {
            Split::Source => "source".into(),
            Split::Target => "target".into(),
        },
        labels_eval_only: dataset.labels_eval_only,
        sample_rate_hz: dataset.sample_rate_hz,
        samples: docs,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(path)
}

fn sample_err(index: usize, blob: &str, reason: impl Into<String>) -> CsiError {
    CsiError::Sample {
        index,
        blob: blob.to_string(),
        reason: reason.into(),
    }
}

/// Load a dataset from its manifest. Samples come back in manifest order;
/// every blob is checksum-verified and shape-checked.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, CsiError> {
    let raw = fs::read(manifest_path)?;
    let doc: ManifestDoc = serde_json::from_slice(&raw)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let split = match doc.split.as_str() {
        "source" => Split::Source,
        "target" => Split::Target,
        other => return Err(CsiError::Manifest(format!("unknown split {other:?}"))),
    };
    let mut samples = Vec::with_capacity(doc.samples.len());
    for (i, sd) in doc.samples.iter().enumerate() {
        let blob_path = dir.join(&sd.blob);
        let bytes = fs::read(&blob_path)
            .map_err(|e| sample_err(i, &sd.blob, format!("missing blob: {e}")))?;
        if sha256_hex(&bytes) != sd.checksum_sha256 {
            return Err(sample_err(i, &sd.blob, "checksum mismatch"));
        }
        let n_elem: usize = sd.shape.iter().product();
        let payload = match sd.dtype.as_str() {
            "f32" => {
                if sd.shape.len() != 3 {
                    return Err(sample_err(i, &sd.blob, "f32 payload must be rank 3"));
                }
                if bytes.len() != n_elem * 4 {
                    return Err(sample_err(
                        i,
                        &sd.blob,
                        format!("expected {} bytes, found {}", n_elem * 4, bytes.len()),
                    ));
                }
                let vals: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                let arr = Array3::from_shape_vec(
                    (sd.shape[0], sd.shape[1], sd.shape[2]),
                    vals,
                )
                .map_err(|e| sample_err(i, &sd.blob, e.to_string()))?;
                Payload::Features(arr)
            }
            "c64" => {
                if sd.shape.len() != 4 {
                    return Err(sample_err(i, &sd.blob, "c64 payload must be rank 4"));
                }
                if bytes.len() != n_elem * 8 {
                    return Err(sample_err(
                        i,
                        &sd.blob,
                        format!("expected {} bytes, found {}", n_elem * 8, bytes.len()),
                    ));
                }
                let vals: Vec<Complex64> = bytes
                    .chunks_exact(8)
                    .map(|c| {
                        let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                        let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
                        Complex64::new(re, im)
                    })
                    .collect();
                let arr = Array4::from_shape_vec(
                    (sd.shape[0], sd.shape[1], sd.shape[2], sd.shape[3]),
                    vals,
                )
                .map_err(|e| sample_err(i, &sd.blob, e.to_string()))?;
                let tensor = CsiTensor::new(arr, doc.sample_rate_hz, sd.carrier_hz)
                    .map_err(|e| sample_err(i, &sd.blob, e.to_string()))?;
                Payload::RawCsi(tensor)
            }
            other => {
                return Err(sample_err(i, &sd.blob, format!("unknown dtype {other:?}")));
            }
        };
        let labels = PaddedLabelVector::from_class_indices(&sd.labels, doc.k)
            .map_err(|e| sample_err(i, &sd.blob, e.to_string()))?;
        if labels.m() != doc.m {
            return Err(sample_err(
                i,
                &sd.blob,
                format!("label vector has {} slots, manifest declares {}", labels.m(), doc.m),
            ));
        }
        if labels.occupancy() != sd.occupancy {
            return Err(sample_err(
                i,
                &sd.blob,
                format!(
                    "declared occupancy {} disagrees with labels ({})",
                    sd.occupancy,
                    labels.occupancy()
                ),
            ));
        }
        samples.push(StoredSample {
            payload,
            labels,
            environment_id: sd.environment_id.clone(),
            carrier_hz: sd.carrier_hz,
        });
    }
    Ok(Dataset {
        profile: doc.profile,
        k: doc.k,
        m: doc.m,
        split,
        labels_eval_only: doc.labels_eval_only,
        sample_rate_hz: doc.sample_rate_hz,
        samples,
    })
}

impl Dataset {
    /// Convert stored payloads to model-ready samples with canonical
    /// `(1, F, T)` features, in manifest order.
    pub fn to_samples(&self) -> Result<Vec<Sample>, CsiError> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let features = match (&self.profile, &s.payload) {
                    (Profile::WimansAmp, Payload::Features(a)) => {
                        // Disk layout is time-major (1, T, F).
                        to_canonical_features(&a.mapv(f64::from))
                    }
                    (Profile::WidarPhaseRatio, Payload::Features(a)) => a.mapv(f64::from),
                    (Profile::Synthetic, Payload::RawCsi(t)) => {
                        to_canonical_features(&amplitude_flatten(t))
                    }
                    (p, _) => {
                        return Err(CsiError::Profile(format!(
                            "sample {i}: payload kind does not match profile {p:?}"
                        )));
                    }
                };
                Ok(Sample {
                    features,
                    labels: s.labels.clone(),
                    domain: DomainDescriptor {
                        environment_id: s.environment_id.clone(),
                        carrier_hz: s.carrier_hz,
                        split: self.split,
                    },
                    quality: Default::default(),
                })
            })
            .collect()
    }
}
