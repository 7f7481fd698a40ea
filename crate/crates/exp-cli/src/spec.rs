//! Experiment specification: scenario, method list, seeds, dataset
//! geometry, and per-stage trainer overrides. Parsed from TOML; every key
//! is documented in the binary's `--help`.

use serde::{Deserialize, Serialize};
use synth_channel::{BenchmarkConfig, ShiftKind};
use train_adapt::TrainConfig;

use crate::CliError;

/// Which benchmark a run targets. The `su_*` names are single-user; the
/// rest are multi-user. `synthetic_<name>` is a free-form label whose
/// geometry comes entirely from the `[dataset]` table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    CrossRoom,
    CrossFrequency,
    Combined,
    SuCrossRoom,
    SuCrossTorso,
    SuCrossFace,
    Synthetic(String),
}

impl Scenario {
    pub fn name(&self) -> String {
        match self {
            Scenario::CrossRoom => "cross_room".into(),
            Scenario::CrossFrequency => "cross_frequency".into(),
            Scenario::Combined => "combined".into(),
            Scenario::SuCrossRoom => "su_cross_room".into(),
            Scenario::SuCrossTorso => "su_cross_torso".into(),
            Scenario::SuCrossFace => "su_cross_face".into(),
            Scenario::Synthetic(tag) => format!("synthetic_{tag}"),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "cross_room" => Ok(Scenario::CrossRoom),
            "cross_frequency" => Ok(Scenario::CrossFrequency),
            "combined" => Ok(Scenario::Combined),
            "su_cross_room" => Ok(Scenario::SuCrossRoom),
            "su_cross_torso" => Ok(Scenario::SuCrossTorso),
            "su_cross_face" => Ok(Scenario::SuCrossFace),
            other => match other.strip_prefix("synthetic_") {
                Some(tag) if !tag.is_empty() => Ok(Scenario::Synthetic(tag.to_string())),
                _ => Err(format!(
                    "unknown scenario `{other}`; expected cross_room, cross_frequency, \
                     combined, su_cross_room, su_cross_torso, su_cross_face, or synthetic_<name>"
                )),
            },
        }
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.name()
    }
}

/// Adaptation mode implied by the scenario (and, for `synthetic_*`, by the
/// dataset's `single_user` key).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    MultiUser,
    SingleUser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SourceOnly,
    ShotIm,
    ShotPp,
    MuShotFi,
    MuShotFiCpc,
    SuShotFi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::ShotIm => "shot_im",
            Method::ShotPp => "shot_pp",
            Method::MuShotFi => "mu_shot_fi",
            Method::MuShotFiCpc => "mu_shot_fi_cpc",
            Method::SuShotFi => "su_shot_fi",
        }
    }

    /// Rotation-head pre-training stage (multi-user only; single-user
    /// methods train the rotation head jointly during adaptation).
    pub fn needs_rotation_pretrain(&self, mode: Mode) -> bool {
        mode == Mode::MultiUser
            && matches!(self, Method::ShotPp | Method::MuShotFi | Method::MuShotFiCpc)
    }

    pub fn needs_cpc_pretrain(&self) -> bool {
        matches!(self, Method::MuShotFiCpc | Method::SuShotFi)
    }

    /// Whether the adaptation stage carries a rotation term whose weight
    /// the `lambda_rot_sweep` list may vary.
    pub fn uses_rotation(&self, mode: Mode) -> bool {
        match mode {
            Mode::MultiUser => self.needs_rotation_pretrain(mode),
            Mode::SingleUser => matches!(self, Method::ShotPp | Method::SuShotFi),
        }
    }

    pub fn compatible(&self, mode: Mode) -> bool {
        match self {
            Method::MuShotFi | Method::MuShotFiCpc => mode == Mode::MultiUser,
            Method::SuShotFi => mode == Mode::SingleUser,
            _ => true,
        }
    }
}

/// Synthetic dataset geometry. Keys left unset take mode-dependent desk
/// defaults (multi-user: K=3 activities, M=3 slots, T=100; single-user:
/// K=6, M=1, T=140 so CPC windows fit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetParams {
    pub seed: u64,
    pub n_source: usize,
    pub n_target: usize,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub occupancy: Option<Vec<f64>>,
    pub n_r: usize,
    pub n_t: usize,
    pub n_sc: usize,
    pub t_len: Option<usize>,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub n_static_paths: usize,
    pub paths_per_user: usize,
    pub source_carrier_hz: f64,
    pub target_carrier_hz: f64,
    /// Only read for `synthetic_*` scenarios; named scenarios fix it.
    pub shift: Option<ShiftKind>,
    /// Only read for `synthetic_*` scenarios.
    pub single_user: bool,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            seed: 7,
            n_source: 256,
            n_target: 256,
            k: None,
            m: None,
            occupancy: None,
            n_r: 1,
            n_t: 1,
            n_sc: 16,
            t_len: None,
            sample_rate_hz: 50.0,
            noise_std: 0.05,
            n_static_paths: 4,
            paths_per_user: 2,
            source_carrier_hz: 2.4e9,
            target_carrier_hz: 5.0e9,
            shift: None,
            single_user: false,
        }
    }
}

impl DatasetParams {
    pub fn feature_rows(&self) -> usize {
        self.n_r * self.n_t * self.n_sc
    }

    /// Resolve the scenario + params into a concrete generator config and
    /// the adaptation mode it implies.
    pub fn resolve(&self, scenario: &Scenario) -> Result<(BenchmarkConfig, Mode), CliError> {
        if self.n_source == 0 {
            return Err(CliError::Config("dataset.n_source must be >= 1".into()));
        }
        if self.n_target == 0 {
            return Err(CliError::Config("dataset.n_target must be >= 1".into()));
        }
        let (shift, mode) = match scenario {
            Scenario::CrossRoom => (ShiftKind::Room, Mode::MultiUser),
            Scenario::CrossFrequency => (ShiftKind::Frequency, Mode::MultiUser),
            Scenario::Combined => (ShiftKind::Combined, Mode::MultiUser),
            // The simulator has no body-orientation axis; the single-user
            // shifts map onto its three domain axes instead.
            Scenario::SuCrossRoom => (ShiftKind::Room, Mode::SingleUser),
            Scenario::SuCrossFace => (ShiftKind::Frequency, Mode::SingleUser),
            Scenario::SuCrossTorso => (ShiftKind::Combined, Mode::SingleUser),
            Scenario::Synthetic(_) => (
                self.shift.unwrap_or(ShiftKind::Frequency),
                if self.single_user {
                    Mode::SingleUser
                } else {
                    Mode::MultiUser
                },
            ),
        };
        let cfg = match mode {
            Mode::MultiUser => {
                let m = self.m.unwrap_or(3);
                let occupancy = self
                    .occupancy
                    .clone()
                    .unwrap_or_else(|| default_occupancy(m));
                BenchmarkConfig {
                    seed: self.seed,
                    k: self.k.unwrap_or(3),
                    m,
                    occupancy,
                    t_len: self.t_len.unwrap_or(100),
                    ..self.base(shift)
                }
            }
            Mode::SingleUser => {
                if self.m.is_some_and(|m| m != 1) {
                    return Err(CliError::Config(
                        "dataset.m must be 1 on single-user scenarios".into(),
                    ));
                }
                let occupancy = self.occupancy.clone().unwrap_or_else(|| vec![0.0, 1.0]);
                if occupancy.len() != 2 || occupancy[0] != 0.0 {
                    return Err(CliError::Config(
                        "dataset.occupancy must be [0.0, 1.0] on single-user scenarios \
                         (every sample has exactly one user)"
                            .into(),
                    ));
                }
                BenchmarkConfig {
                    seed: self.seed,
                    k: self.k.unwrap_or(6),
                    m: 1,
                    occupancy,
                    t_len: self.t_len.unwrap_or(140),
                    ..self.base(shift)
                }
            }
        };
        Ok((cfg, mode))
    }

    fn base(&self, shift: ShiftKind) -> BenchmarkConfig {
        BenchmarkConfig {
            seed: self.seed,
            n_source: self.n_source,
            n_target: self.n_target,
            shift,
            source_carrier_hz: self.source_carrier_hz,
            target_carrier_hz: self.target_carrier_hz,
            n_r: self.n_r,
            n_t: self.n_t,
            n_sc: self.n_sc,
            sample_rate_hz: self.sample_rate_hz,
            noise_std: self.noise_std,
            n_static_paths: self.n_static_paths,
            paths_per_user: self.paths_per_user,
            ..BenchmarkConfig::default()
        }
    }
}

fn default_occupancy(m: usize) -> Vec<f64> {
    // Mild skew toward occupied rooms; covers 0..=min(m,3) users.
    match m {
        1 => vec![0.25, 0.75],
        2 => vec![0.2, 0.4, 0.4],
        _ => vec![0.15, 0.3, 0.3, 0.25],
    }
}

/// Partial trainer override; unset keys keep the stage profile's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagePatch {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda_ent: Option<f64>,
    pub lambda_rot: Option<f64>,
    pub lambda_cpc: Option<f64>,
    pub lambda_cls: Option<f64>,
    pub label_smoothing: Option<f64>,
    pub deterministic: Option<bool>,
}

impl StagePatch {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lambda_ent {
            cfg.lambda_ent = v;
        }
        if let Some(v) = self.lambda_rot {
            cfg.lambda_rot = v;
        }
        if let Some(v) = self.lambda_cpc {
            cfg.lambda_cpc = v;
        }
        if let Some(v) = self.lambda_cls {
            cfg.lambda_cls = v;
        }
        if let Some(v) = self.label_smoothing {
            cfg.label_smoothing = v;
        }
        if let Some(v) = self.deterministic {
            cfg.deterministic = v;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub source: StagePatch,
    pub rotation: StagePatch,
    pub cpc: StagePatch,
    pub adapt: StagePatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Extra adaptation runs per rotation-bearing method, one per weight.
    #[serde(default)]
    pub lambda_rot_sweep: Vec<f64>,
    #[serde(default)]
    pub dataset: DatasetParams,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::Config("methods must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.seeds {
            if !seen.insert(s) {
                return Err(CliError::Config(format!("duplicate seed {s}")));
            }
        }
        let (cfg, mode) = self.dataset.resolve(&self.scenario)?;
        for m in &self.methods {
            if !m.compatible(mode) {
                return Err(CliError::Config(format!(
                    "method `{}` is incompatible with scenario `{}` ({})",
                    m.name(),
                    self.scenario.name(),
                    match mode {
                        Mode::MultiUser => "multi-user data",
                        Mode::SingleUser => "single-user data",
                    }
                )));
            }
        }
        for &v in &self.lambda_rot_sweep {
            if !(v >= 0.0) {
                return Err(CliError::Config(format!(
                    "lambda_rot_sweep entries must be >= 0, got {v}"
                )));
            }
        }
        if mode == Mode::MultiUser {
            // The multi-user conv stack is unpadded; reject grids its
            // kernels cannot cover before any training starts.
            net_arch::ConvBackboneSpec::desk()
                .output_hw(self.dataset.feature_rows(), cfg.t_len)
                .map_err(|e| {
                    CliError::Config(format!(
                        "dataset grid (n_r*n_t*n_sc = {}, t_len = {}) is too small for the \
                         backbone: {e}",
                        self.dataset.feature_rows(),
                        cfg.t_len
                    ))
                })?;
        }
        if self.methods.iter().any(|m| m.needs_cpc_pretrain()) {
            let spec = net_arch::CpcSpec::desk(self.dataset.feature_rows());
            spec.anchor_range(cfg.t_len).map_err(|_| {
                CliError::Config(format!(
                    "dataset.t_len = {} is too short for CPC windows; need at least {}",
                    cfg.t_len,
                    (spec.w_min + spec.k_p) * spec.window
                ))
            })?;
        }
        Ok(())
    }

    /// Expanded (method, cell-name, forced λ_rot) list: the base methods
    /// plus one extra cell per sweep value for each rotation-bearing method.
    pub fn cells(&self, mode: Mode) -> Vec<(Method, String, Option<f64>)> {
        let mut out: Vec<(Method, String, Option<f64>)> = self
            .methods
            .iter()
            .map(|m| (*m, m.name().to_string(), None))
            .collect();
        for &v in &self.lambda_rot_sweep {
            for m in &self.methods {
                if m.uses_rotation(mode) {
                    out.push((*m, format!("{}_rot{v}", m.name()), Some(v)));
                }
            }
        }
        out
    }
}
