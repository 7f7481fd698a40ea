//! Run-directory artifacts: config snapshot, per-epoch JSONL, final report.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::TrainError;

/// One epoch of a run: averaged loss terms plus an optional probe metric
/// snapshot (a serialized metric report).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<serde_json::Value>,
}

impl EpochRecord {
    pub fn new(epoch: usize) -> Self {
        EpochRecord {
            epoch,
            terms: BTreeMap::new(),
            probe: None,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.get(name).copied()
    }
}

/// Directory a run writes into. Creating one creates the directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, TrainError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Snapshot the run configuration (and anything else the caller wants
    /// reproduced) as `config.json`.
    pub fn write_config<T: Serialize>(&self, cfg: &T) -> Result<(), TrainError> {
        let s = serde_json::to_string_pretty(cfg)?;
        fs::write(self.path("config.json"), s)?;
        Ok(())
    }

    /// Append one line to `epochs.jsonl`.
    pub fn append_epoch(&self, rec: &EpochRecord) -> Result<(), TrainError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("epochs.jsonl"))?;
        let line = serde_json::to_string(rec)?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    pub fn write_report<T: Serialize>(&self, report: &T) -> Result<(), TrainError> {
        let s = serde_json::to_string_pretty(report)?;
        fs::write(self.path("report.json"), s)?;
        Ok(())
    }

    /// Read back `epochs.jsonl`.
    pub fn read_epochs(&self) -> Result<Vec<EpochRecord>, TrainError> {
        let text = fs::read_to_string(self.path("epochs.jsonl"))?;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line)?);
        }
        Ok(out)
    }
}
