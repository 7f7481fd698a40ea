//! Deterministic scene rendering to raw CSI tensors.

use crate::scene::SceneSpec;
use crate::SynthError;
use csi_core::{pad_label_set, CsiTensor, PaddedLabelVector};
use ndarray::Array4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
/// Fractional spacing used to decorrelate paths within a user; irrational so
/// no two path indices land on the same modulation phase or direction.
const GOLDEN_FRAC: f64 = 0.618_033_988_749_894_9;

const TAU: f64 = std::f64::consts::TAU;

/// Per-path quantities that do not depend on antennas or subcarriers.
struct ResolvedPath {
    attenuation: f64,
    delay_s: f64,
    doppler_hz: f64,
    aoa_sin: f64,
    aod_sin: f64,
    /// Time modulation, `None` for static paths.
    modulation: Option<Modulation>,
}

struct Modulation {
    activity_id: usize,
    delay_amp_s: f64,
    amp_depth: f64,
    freq_hz: f64,
    waveform: crate::Waveform,
    phase_cycles: f64,
}

fn resolve_paths(scene: &SceneSpec) -> Vec<ResolvedPath> {
    let mut out = Vec::new();
    for p in &scene.static_paths {
        out.push(ResolvedPath {
            attenuation: p.attenuation,
            delay_s: p.delay_s,
            doppler_hz: p.doppler_hz,
            aoa_sin: p.aoa_sin,
            aod_sin: p.aod_sin,
            modulation: None,
        });
    }
    for user in &scene.users {
        let k = &user.activity;
        for (pi, p) in user.paths.iter().enumerate() {
            // Direction of body motion relative to the path, fixed per path
            // index so the Doppler signature is stable when scenes are
            // composed user by user.
            let cos_dir = (TAU * GOLDEN_FRAC * (pi + 1) as f64).cos();
            let body_doppler =
                k.speed_mps * scene.carrier_hz / SPEED_OF_LIGHT_M_S * cos_dir;
            out.push(ResolvedPath {
                attenuation: p.attenuation,
                delay_s: p.delay_s,
                doppler_hz: p.doppler_hz + body_doppler,
                aoa_sin: p.aoa_sin,
                aod_sin: p.aod_sin,
                modulation: Some(Modulation {
                    activity_id: k.activity_id,
                    delay_amp_s: k.delay_mod_amp_s,
                    amp_depth: k.amp_mod_depth,
                    freq_hz: k.mod_freq_hz,
                    waveform: k.waveform,
                    phase_cycles: user.phase_offset + GOLDEN_FRAC * (pi + 1) as f64,
                }),
            });
        }
    }
    out
}

/// Render a scene to a raw CSI tensor of shape `(T, N_r, N_t, N_sc)` plus
/// the padded ground-truth label vector. Pure function of `(scene, seed)`:
/// identical inputs produce bit-identical tensors. With `noise_std == 0` the
/// output is exactly additive over paths, so a multi-user tensor equals the
/// sum of its single-user renders up to floating-point summation order.
pub fn render_csi(
    scene: &SceneSpec,
    seed: u64,
) -> Result<(CsiTensor, PaddedLabelVector), SynthError> {
    scene.validate()?;
    let paths = resolve_paths(scene);
    let (n_t_ax, n_r, n_tx, n_sc) = (scene.t_len, scene.n_r, scene.n_t, scene.n_sc);
    let mut values = Array4::<Complex64>::zeros((n_t_ax, n_r, n_tx, n_sc));

    let freqs: Vec<f64> = (0..n_sc).map(|k| scene.subcarrier_hz(k)).collect();

    for path in &paths {
        for t in 0..n_t_ax {
            let t_s = t as f64 / scene.sample_rate_hz;
            let (alpha, tau) = match &path.modulation {
                None => (path.attenuation, path.delay_s),
                Some(m) => {
                    let mv = m.waveform.eval(m.freq_hz * t_s + m.phase_cycles);
                    if !mv.is_finite() {
                        return Err(SynthError::NonFiniteModulator {
                            activity: m.activity_id,
                            t: t_s,
                        });
                    }
                    (
                        path.attenuation * (1.0 + m.amp_depth * mv),
                        path.delay_s + m.delay_amp_s * mv,
                    )
                }
            };
            let doppler_phase = TAU * path.doppler_hz * t_s;
            for m_rx in 0..n_r {
                for n_tx_i in 0..n_tx {
                    let ant_delay = (m_rx as f64 * scene.rx_spacing_m * path.aoa_sin
                        + n_tx_i as f64 * scene.tx_spacing_m * path.aod_sin)
                        / SPEED_OF_LIGHT_M_S;
                    for (k, &f_k) in freqs.iter().enumerate() {
                        let phase = -TAU * f_k * (tau + ant_delay) + doppler_phase;
                        values[(t, m_rx, n_tx_i, k)] +=
                            Complex64::new(alpha * phase.cos(), alpha * phase.sin());
                    }
                }
            }
        }
    }

    if scene.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Circular complex Gaussian: each component carries half the power.
        let comp = Normal::new(0.0, scene.noise_std / std::f64::consts::SQRT_2)
            .expect("noise_std validated nonnegative");
        for v in values.iter_mut() {
            let re = comp.sample(&mut rng);
            let im = comp.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }

    let activities: Vec<usize> = scene
        .users
        .iter()
        .map(|u| u.activity.activity_id)
        .collect();
    let labels = pad_label_set(&activities, scene.m_slots)?;
    let tensor = CsiTensor::new(values, scene.sample_rate_hz, scene.carrier_hz)?;
    Ok((tensor, labels))
}

/// Frequency-shift pair: the target scene is the source scene re-carried to
/// `target_carrier_hz`, nothing else changes. Room layout, users, and labels
/// are identical; only the radio frequency (and therefore every phase and
/// Doppler pattern) moves.
pub fn make_shift_pair_to(source: &SceneSpec, target_carrier_hz: f64) -> (SceneSpec, SceneSpec) {
    let mut target = source.clone();
    target.carrier_hz = target_carrier_hz;
    (source.clone(), target)
}

/// [`make_shift_pair_to`] with the conventional 2.4 GHz -> 5 GHz move.
pub fn make_shift_pair(source: &SceneSpec) -> (SceneSpec, SceneSpec) {
    make_shift_pair_to(source, 5.0e9)
}
