//! Label-free views of target data.
//!
//! Adaptation entry points accept only [`UnlabeledTargetSet`]; the type
//! holds feature grids and nothing else, so an adaptation loop cannot read
//! target labels even by accident. Splitting a labeled sample set returns
//! the labels in a [`SealedLabels`] sidecar that the caller may open for
//! post-hoc scoring, and a [`ProbeSet`] keeps a labeled held-out split for
//! observational per-epoch metrics.

use csi_core::{PaddedLabelVector, Sample};
use ndarray::Array3;

use crate::TrainError;

/// Target features with labels physically absent.
pub struct UnlabeledTargetSet {
    features: Vec<Array3<f64>>,
}

impl UnlabeledTargetSet {
    /// Strips labels off `samples`; the label column comes back sealed so
    /// evaluation code can score the adapted model afterwards.
    pub fn from_samples(samples: Vec<Sample>) -> (Self, SealedLabels) {
        let mut features = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            features.push(s.features);
            labels.push(s.labels);
        }
        (UnlabeledTargetSet { features }, SealedLabels { labels })
    }

    /// Build straight from feature grids (nothing to seal).
    pub fn from_features(features: Vec<Array3<f64>>) -> Self {
        UnlabeledTargetSet { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, i: usize) -> &Array3<f64> {
        &self.features[i]
    }

    pub fn features(&self) -> &[Array3<f64>] {
        &self.features
    }

    /// All grids must share one shape with `channels` leading; returns that
    /// shape.
    pub(crate) fn check_uniform(
        &self,
        channels: usize,
    ) -> Result<(usize, usize, usize), TrainError> {
        let first = self
            .features
            .first()
            .ok_or_else(|| TrainError::Input("empty target set".into()))?
            .dim();
        if first.0 != channels {
            return Err(TrainError::Input(format!(
                "expected {channels} channels, target grids have {}",
                first.0
            )));
        }
        for (i, f) in self.features.iter().enumerate() {
            if f.dim() != first {
                return Err(TrainError::Input(format!(
                    "target sample {i} has shape {:?}, expected {first:?}",
                    f.dim()
                )));
            }
        }
        Ok(first)
    }
}

/// Labels detached from an [`UnlabeledTargetSet`]; only scoring code opens
/// it, after adaptation finished.
pub struct SealedLabels {
    labels: Vec<PaddedLabelVector>,
}

impl SealedLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn open(self) -> Vec<PaddedLabelVector> {
        self.labels
    }
}

/// Small labeled held-out split for per-epoch trajectory metrics. Never
/// feeds gradients.
pub struct ProbeSet {
    pub features: Vec<Array3<f64>>,
    pub labels: Vec<PaddedLabelVector>,
}

impl ProbeSet {
    pub fn from_samples(samples: &[Sample]) -> Self {
        ProbeSet {
            features: samples.iter().map(|s| s.features.clone()).collect(),
            labels: samples.iter().map(|s| s.labels.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}
