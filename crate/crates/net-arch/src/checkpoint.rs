//! Bit-exact model checkpoints.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header
//! (format version, seed, architecture descriptor, slot table), then raw
//! f64 little-endian tensor data in slot order. Parameters and buffers are
//! f64 end to end, so a save/load round trip reproduces every bit.

use crate::ArchError;
use autodiff::{ParamStore, SlotKind, Tensor};
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"NETCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SlotDoc {
    name: String,
    kind: String,
    trainable: bool,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    seed: u64,
    arch: serde_json::Value,
    slots: Vec<SlotDoc>,
}

/// A loaded checkpoint: the architecture descriptor it was saved with, the
/// init seed, and the reconstructed parameter store (slot creation order
/// preserved).
pub struct Checkpoint {
    pub arch: serde_json::Value,
    pub seed: u64,
    pub store: ParamStore,
}

pub fn save_checkpoint(
    path: &Path,
    arch: &serde_json::Value,
    seed: u64,
    store: &ParamStore,
) -> Result<(), ArchError> {
    let mut slots = Vec::with_capacity(store.len());
    let mut data = Vec::new();
    for id in store.ids() {
        let v = store.value(id);
        slots.push(SlotDoc {
            name: store.name(id).to_string(),
            kind: match store.kind(id) {
                SlotKind::Param => "param".into(),
                SlotKind::Buffer => "buffer".into(),
            },
            trainable: store.is_trainable(id),
            shape: v.shape().to_vec(),
        });
        for x in v.iter() {
            data.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        seed,
        arch: arch.clone(),
        slots,
    })?;
    let mut bytes = Vec::with_capacity(16 + header.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&data);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ArchError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(ArchError::Checkpoint("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(ArchError::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;
    if header.format_version != FORMAT_VERSION {
        return Err(ArchError::Checkpoint(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let mut offset = 16 + hlen;
    let mut store = ParamStore::new();
    for slot in &header.slots {
        let n: usize = slot.shape.iter().product();
        let end = offset + n * 8;
        if bytes.len() < end {
            return Err(ArchError::Checkpoint(format!(
                "truncated data for slot {}",
                slot.name
            )));
        }
        let vals: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        let tensor = Tensor::from_shape_vec(IxDyn(&slot.shape), vals)
            .map_err(|e| ArchError::Checkpoint(e.to_string()))?;
        let id = match slot.kind.as_str() {
            "param" => store.add_param(&slot.name, tensor),
            "buffer" => store.add_buffer(&slot.name, tensor),
            other => {
                return Err(ArchError::Checkpoint(format!(
                    "unknown slot kind {other:?}"
                )));
            }
        };
        if slot.kind == "param" {
            store.set_trainable(id, slot.trainable);
        }
    }
    if offset != bytes.len() {
        return Err(ArchError::Checkpoint("trailing bytes after data".into()));
    }
    Ok(Checkpoint {
        arch: header.arch,
        seed: header.seed,
        store,
    })
}

/// SHA-256 over name, kind, shape, and raw little-endian data of every slot
/// whose name starts with `prefix` (creation order). Two stores hash equal
/// exactly when those slots are bit-identical; the classifier-freeze check
/// during adaptation is built on this.
pub fn param_hash(store: &ParamStore, prefix: &str) -> String {
    let mut hasher = Sha256::new();
    for id in store.ids() {
        let name = store.name(id);
        if !name.starts_with(prefix) {
            continue;
        }
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update([match store.kind(id) {
            SlotKind::Param => 1u8,
            SlotKind::Buffer => 2u8,
        }]);
        let v = store.value(id);
        for d in v.shape() {
            hasher.update((*d as u64).to_le_bytes());
        }
        for x in v.iter() {
            hasher.update(x.to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
