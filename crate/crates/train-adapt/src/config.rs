//! Run configuration and the published hyper-parameter profiles.

use serde::{Deserialize, Serialize};

use crate::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd { momentum: f64, weight_decay: f64 },
}

/// One training or adaptation run. Loss weights that an entry point does
/// not use are simply ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub lambda_ent: f64,
    pub lambda_rot: f64,
    pub lambda_cpc: f64,
    pub lambda_cls: f64,
    pub label_smoothing: f64,
    /// Multi-user adaptation only: weight the diversity term by slot
    /// occupancy instead of spreading mass over every class (the plain
    /// SHOT-IM marginal). Single-user adaptation ignores this.
    #[serde(default = "default_true")]
    pub occupancy_gent: bool,
    pub deterministic: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, l) in [
            ("lambda_ent", self.lambda_ent),
            ("lambda_rot", self.lambda_rot),
            ("lambda_cpc", self.lambda_cpc),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !(l >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be >= 0, got {l}")));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Config(format!(
                "label_smoothing must be in [0,1), got {}",
                self.label_smoothing
            )));
        }
        if let OptimizerKind::Sgd {
            momentum,
            weight_decay,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&momentum) || weight_decay < 0.0 {
                return Err(TrainError::Config(format!(
                    "bad sgd parameters: momentum {momentum}, weight_decay {weight_decay}"
                )));
            }
        }
        Ok(())
    }

    fn base(seed: u64) -> Self {
        TrainConfig {
            epochs: 0,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed,
            lambda_ent: 0.0,
            lambda_rot: 0.0,
            lambda_cpc: 0.0,
            lambda_cls: 0.0,
            label_smoothing: 0.0,
            occupancy_gent: true,
            deterministic: true,
        }
    }

    /// Multi-user source training: Adam 1e-3, 50 epochs, smoothing 0.2.
    pub fn source_multiuser(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            label_smoothing: 0.2,
            ..Self::base(seed)
        }
    }

    /// Rotation-head pre-training: Adam 1e-3, 70 epochs, backbone frozen.
    pub fn rotation_pretrain(seed: u64) -> Self {
        TrainConfig {
            epochs: 70,
            ..Self::base(seed)
        }
    }

    /// Multi-user joint adaptation: Adam 1e-4, batch 64, 50 epochs,
    /// weights (ent, rot) = (1.0, 0.5).
    pub fn adapt_multiuser(seed: u64) -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-4,
            lambda_ent: 1.0,
            lambda_rot: 0.5,
            ..Self::base(seed)
        }
    }

    /// Ablation variant of [`TrainConfig::adapt_multiuser`] with the CPC
    /// term switched on.
    pub fn adapt_multiuser_cpc(seed: u64) -> Self {
        TrainConfig {
            lambda_cpc: 0.3,
            ..Self::adapt_multiuser(seed)
        }
    }

    /// CPC pre-training: Adam 1e-3, batch 32, 70 epochs.
    pub fn cpc_pretrain(seed: u64) -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 32,
            ..Self::base(seed)
        }
    }

    /// Single-user source training: SGD(0.9, 5e-4) at 0.1, 30 epochs,
    /// smoothing 0.1.
    pub fn source_singleuser(seed: u64) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd {
                momentum: 0.9,
                weight_decay: 5e-4,
            },
            label_smoothing: 0.1,
            ..Self::base(seed)
        }
    }

    /// Single-user joint adaptation: Adam 1e-4, batch 32, 70 epochs,
    /// weights (cls, ent, rot, cpc) = (0.1, 1.0, 0.3, 0.3).
    pub fn adapt_singleuser(seed: u64) -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 32,
            learning_rate: 1e-4,
            lambda_ent: 1.0,
            lambda_rot: 0.3,
            lambda_cpc: 0.3,
            lambda_cls: 0.1,
            ..Self::base(seed)
        }
    }
}
