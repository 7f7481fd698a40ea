//! Paired source/target benchmark generation.
//!
//! A benchmark is two datasets rendered from the same generative family.
//! The label stream is shared: sample `i` of the target split carries the
//! same activity multiset as sample `i` of the source split (up to the
//! shorter split length), so the domain shift is covariate-only and any
//! accuracy drop is attributable to the channel, not to label drift.
//!
//! Two shifts exist. `frequency` re-carries the identical room and user
//! geometry from 2.4 GHz to 5 GHz; scene `i` of the target split equals
//! scene `i` of the source split except for `carrier_hz`. `room` keeps the
//! radio fixed and resamples the static multipath background and user
//! geometry, like moving the rig to another room.

use crate::render::render_csi;
use crate::scene::{ActivityKernel, PathSpec, SceneSpec, UserSpec};
use crate::SynthError;
use csi_core::{pad_label_set, write_dataset, Dataset, Payload, Profile, Split, StoredSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Frequency,
    Room,
    /// Room change and carrier change at once.
    Combined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    /// Number of activity classes.
    #[serde(alias = "K")]
    pub k: usize,
    /// Label slot capacity (maximum concurrent users).
    #[serde(alias = "M")]
    pub m: usize,
    pub n_source: usize,
    pub n_target: usize,
    /// `occupancy[c]` is the probability that a sample contains exactly `c`
    /// users; entries are renormalized to sum to one.
    #[serde(alias = "occupancy_dist")]
    pub occupancy: Vec<f64>,
    pub shift: ShiftKind,
    #[serde(alias = "carrier_src_hz")]
    pub source_carrier_hz: f64,
    #[serde(alias = "carrier_tgt_hz")]
    pub target_carrier_hz: f64,
    pub n_r: usize,
    pub n_t: usize,
    pub n_sc: usize,
    pub t_len: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub n_static_paths: usize,
    pub paths_per_user: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            k: 9,
            m: 6,
            n_source: 200,
            n_target: 200,
            occupancy: vec![0.2, 0.3, 0.3, 0.2],
            shift: ShiftKind::Frequency,
            source_carrier_hz: 2.4e9,
            target_carrier_hz: 5.0e9,
            n_r: 3,
            n_t: 3,
            n_sc: 30,
            t_len: 3000,
            sample_rate_hz: 1000.0,
            noise_std: 0.05,
            n_static_paths: 4,
            paths_per_user: 2,
        }
    }
}

impl BenchmarkConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.k == 0 || self.m == 0 {
            return Err(SynthError::Scene("k and m must be >= 1".into()));
        }
        if self.occupancy.is_empty() || self.occupancy.len() > self.m + 1 {
            return Err(SynthError::Scene(format!(
                "occupancy table must cover 1..={} counts, got {}",
                self.m + 1,
                self.occupancy.len()
            )));
        }
        let sum: f64 = self.occupancy.iter().sum();
        if self.occupancy.iter().any(|p| !p.is_finite() || *p < 0.0) || sum <= 0.0 {
            return Err(SynthError::Scene(
                "occupancy probabilities must be nonnegative with positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// Manifest locations of a generated benchmark.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchmarkPaths {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
}

/// Draw `n` activity multisets from the configured occupancy distribution.
/// Each draw picks a user count from `occupancy`, then that many activities
/// uniformly (with replacement) from `0..k`.
pub fn sample_label_sets(
    cfg: &BenchmarkConfig,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>, SynthError> {
    cfg.validate()?;
    let total: f64 = cfg.occupancy.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut count = cfg.occupancy.len() - 1;
        for (c, p) in cfg.occupancy.iter().enumerate() {
            acc += p;
            if u < acc {
                count = c;
                break;
            }
        }
        let acts: Vec<usize> = (0..count).map(|_| rng.gen_range(0..cfg.k)).collect();
        out.push(acts);
    }
    Ok(out)
}

fn random_static_paths(n: usize, rng: &mut impl Rng) -> Vec<PathSpec> {
    (0..n)
        .map(|_| PathSpec {
            attenuation: rng.gen_range(0.5..1.0),
            delay_s: rng.gen_range(10e-9..60e-9),
            doppler_hz: 0.0,
            aoa_sin: rng.gen_range(-0.8..0.8),
            aod_sin: rng.gen_range(-0.8..0.8),
        })
        .collect()
}

fn random_user(
    kernel: &ActivityKernel,
    paths_per_user: usize,
    rng: &mut impl Rng,
) -> UserSpec {
    let paths = (0..paths_per_user)
        .map(|_| PathSpec {
            attenuation: rng.gen_range(0.2..0.6),
            delay_s: rng.gen_range(15e-9..55e-9),
            doppler_hz: 0.0,
            aoa_sin: rng.gen_range(-0.8..0.8),
            aod_sin: rng.gen_range(-0.8..0.8),
        })
        .collect();
    UserSpec {
        activity: kernel.clone(),
        paths,
        phase_offset: rng.gen::<f64>(),
    }
}

struct SplitPlan<'a> {
    n: usize,
    carrier_hz: f64,
    environment_id: &'a str,
    static_paths: &'a [PathSpec],
    geom_seed: u64,
    noise_seed: u64,
    split: Split,
    labels_eval_only: bool,
}

fn render_split(
    cfg: &BenchmarkConfig,
    kernels: &[ActivityKernel],
    labels: &[Vec<usize>],
    plan: &SplitPlan,
    dir: &Path,
) -> Result<PathBuf, SynthError> {
    let mut geom_rng = ChaCha8Rng::seed_from_u64(plan.geom_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(plan.noise_seed);
    let mut samples = Vec::with_capacity(plan.n);
    for acts in labels.iter().take(plan.n) {
        let users: Vec<UserSpec> = acts
            .iter()
            .map(|&a| random_user(&kernels[a], cfg.paths_per_user, &mut geom_rng))
            .collect();
        let scene = SceneSpec {
            environment_id: plan.environment_id.to_string(),
            static_paths: plan.static_paths.to_vec(),
            users,
            carrier_hz: plan.carrier_hz,
            subcarrier_spacing_hz: 312.5e3,
            n_r: cfg.n_r,
            n_t: cfg.n_t,
            n_sc: cfg.n_sc,
            t_len: cfg.t_len,
            sample_rate_hz: cfg.sample_rate_hz,
            noise_std: cfg.noise_std,
            m_slots: cfg.m,
            rx_spacing_m: 0.06,
            tx_spacing_m: 0.06,
        };
        let (mut csi, rendered_labels) = render_csi(&scene, noise_rng.gen::<u64>())?;
        csi.quantize_c64();
        debug_assert!(rendered_labels.multiset_eq(&pad_label_set(acts, cfg.m)?));
        samples.push(StoredSample {
            payload: Payload::RawCsi(csi),
            labels: rendered_labels,
            environment_id: plan.environment_id.to_string(),
            carrier_hz: plan.carrier_hz,
        });
    }
    let dataset = Dataset {
        profile: Profile::Synthetic,
        k: cfg.k,
        m: cfg.m,
        split: plan.split,
        labels_eval_only: plan.labels_eval_only,
        sample_rate_hz: cfg.sample_rate_hz,
        samples,
    };
    Ok(write_dataset(&dataset, dir)?)
}

/// Generate a source/target benchmark under `out_dir` (`out_dir/source` and
/// `out_dir/target`). Deterministic in `cfg.seed`: the same config writes
/// byte-identical manifests and blobs every time.
pub fn generate_benchmark(
    cfg: &BenchmarkConfig,
    out_dir: &Path,
) -> Result<BenchmarkPaths, SynthError> {
    cfg.validate()?;
    let kernels = ActivityKernel::standard_set(cfg.k);

    // Fixed derivation order; every consumer gets its own stream so adding
    // samples to one split cannot perturb the other.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labels_seed = master.gen::<u64>();
    let source_static_seed = master.gen::<u64>();
    let target_static_seed = master.gen::<u64>();
    let source_geom_seed = master.gen::<u64>();
    let target_geom_seed = master.gen::<u64>();
    let source_noise_seed = master.gen::<u64>();
    let target_noise_seed = master.gen::<u64>();

    let mut labels_rng = ChaCha8Rng::seed_from_u64(labels_seed);
    let n_all = cfg.n_source.max(cfg.n_target);
    let labels = sample_label_sets(cfg, n_all, &mut labels_rng)?;

    let source_static = {
        let mut rng = ChaCha8Rng::seed_from_u64(source_static_seed);
        random_static_paths(cfg.n_static_paths, &mut rng)
    };
    // Frequency shift replays the source geometry streams verbatim, so the
    // only difference between paired scenes is the carrier.
    let (target_static, target_env, target_carrier, tgt_geom) = match cfg.shift {
        ShiftKind::Frequency => (
            source_static.clone(),
            "room-a",
            cfg.target_carrier_hz,
            source_geom_seed,
        ),
        ShiftKind::Room => {
            let mut rng = ChaCha8Rng::seed_from_u64(target_static_seed);
            (
                random_static_paths(cfg.n_static_paths, &mut rng),
                "room-b",
                cfg.source_carrier_hz,
                target_geom_seed,
            )
        }
        ShiftKind::Combined => {
            let mut rng = ChaCha8Rng::seed_from_u64(target_static_seed);
            (
                random_static_paths(cfg.n_static_paths, &mut rng),
                "room-b",
                cfg.target_carrier_hz,
                target_geom_seed,
            )
        }
    };

    let source_manifest = render_split(
        cfg,
        &kernels,
        &labels,
        &SplitPlan {
            n: cfg.n_source,
            carrier_hz: cfg.source_carrier_hz,
            environment_id: "room-a",
            static_paths: &source_static,
            geom_seed: source_geom_seed,
            noise_seed: source_noise_seed,
            split: Split::Source,
            labels_eval_only: false,
        },
        &out_dir.join("source"),
    )?;
    let target_manifest = render_split(
        cfg,
        &kernels,
        &labels,
        &SplitPlan {
            n: cfg.n_target,
            carrier_hz: target_carrier,
            environment_id: target_env,
            static_paths: &target_static,
            geom_seed: tgt_geom,
            noise_seed: target_noise_seed,
            split: Split::Target,
            labels_eval_only: true,
        },
        &out_dir.join("target"),
    )?;
    Ok(BenchmarkPaths {
        source_manifest,
        target_manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_table_bounds_are_enforced() {
        let mut cfg = BenchmarkConfig {
            m: 2,
            occupancy: vec![0.25; 4],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.occupancy = vec![0.5, 0.5];
        assert!(cfg.validate().is_ok());
        cfg.occupancy = vec![0.5, -0.1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn label_sampler_respects_k_and_capacity() {
        let cfg = BenchmarkConfig {
            k: 3,
            m: 4,
            occupancy: vec![0.1, 0.2, 0.3, 0.2, 0.2],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets = sample_label_sets(&cfg, 500, &mut rng).unwrap();
        assert_eq!(sets.len(), 500);
        for s in &sets {
            assert!(s.len() <= 4);
            assert!(s.iter().all(|&a| a < 3));
        }
    }
}
