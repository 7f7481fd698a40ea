//! Scene description: geometry, users, and activity kernels.

use serde::{Deserialize, Serialize};

/// One propagation path. Amplitude is a linear voltage gain, delay is in
/// seconds, Doppler in Hz. `aoa_sin` / `aod_sin` are the sines of the
/// arrival/departure angles; combined with the array element spacings they
/// determine the per-antenna delay offsets that make MIMO elements distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub attenuation: f64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    #[serde(default)]
    pub aoa_sin: f64,
    #[serde(default)]
    pub aod_sin: f64,
}

/// Shape of the periodic modulation an activity imposes on its user's paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    /// Smooth oscillation (e.g. walking gait).
    Sine,
    /// Sawtooth ramp (directional, asymmetric motion).
    Ramp,
    /// Short duty-cycle bursts separated by stillness.
    Burst,
}

impl Waveform {
    /// Periodic modulator in [-1, 1] with period 1 in `phase` units.
    pub fn eval(self, phase: f64) -> f64 {
        let p = phase - phase.floor();
        match self {
            Waveform::Sine => (2.0 * std::f64::consts::PI * p).sin(),
            Waveform::Ramp => 2.0 * p - 1.0,
            Waveform::Burst => {
                if p < 0.2 {
                    (2.0 * std::f64::consts::PI * p / 0.2).sin()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Physical signature of one activity class. The kernel perturbs a user's
/// paths over time: delay wobbles by `delay_mod_amp_s`, amplitude by
/// `amp_mod_depth`, and the body segment moves at `speed_mps`, which turns
/// into a carrier-dependent Doppler at render time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityKernel {
    pub activity_id: usize,
    pub delay_mod_amp_s: f64,
    pub mod_freq_hz: f64,
    pub waveform: Waveform,
    pub speed_mps: f64,
    pub amp_mod_depth: f64,
}

impl ActivityKernel {
    /// Standard bank of `k` mutually distinguishable activity signatures.
    /// Signatures differ jointly in modulation rate, delay swing, waveform
    /// shape, and body speed so that no single feature carries the class.
    pub fn standard_set(k: usize) -> Vec<ActivityKernel> {
        let waveforms = [Waveform::Sine, Waveform::Ramp, Waveform::Burst];
        (0..k)
            .map(|a| ActivityKernel {
                activity_id: a,
                delay_mod_amp_s: 0.4e-9 + 0.35e-9 * a as f64,
                mod_freq_hz: 0.8 + 0.9 * a as f64,
                waveform: waveforms[a % waveforms.len()],
                speed_mps: 0.3 + 0.5 * a as f64,
                amp_mod_depth: 0.15 + 0.08 * (a % 4) as f64,
            })
            .collect()
    }
}

/// One user in the scene: which activity they perform and the paths their
/// body contributes to the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub activity: ActivityKernel,
    pub paths: Vec<PathSpec>,
    /// Phase offset (in modulation cycles) so two users doing the same
    /// activity are not locked in step.
    #[serde(default)]
    pub phase_offset: f64,
}

/// Full scene: static multipath background, users, and radio parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub environment_id: String,
    pub static_paths: Vec<PathSpec>,
    pub users: Vec<UserSpec>,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_r: usize,
    pub n_t: usize,
    pub n_sc: usize,
    pub t_len: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    /// Slot capacity of the label vector produced with each render.
    pub m_slots: usize,
    pub rx_spacing_m: f64,
    pub tx_spacing_m: f64,
}

impl SceneSpec {
    /// Subcarrier frequency for index `k`, centered on the carrier.
    pub fn subcarrier_hz(&self, k: usize) -> f64 {
        self.carrier_hz + (k as f64 - self.n_sc as f64 / 2.0) * self.subcarrier_spacing_hz
    }

    pub fn validate(&self) -> Result<(), crate::SynthError> {
        if self.n_r == 0 || self.n_t == 0 || self.n_sc == 0 || self.t_len == 0 {
            return Err(crate::SynthError::Scene(
                "antenna/subcarrier/time dimensions must be nonzero".into(),
            ));
        }
        if !(self.carrier_hz > 0.0) || !(self.sample_rate_hz > 0.0) {
            return Err(crate::SynthError::Scene(
                "carrier_hz and sample_rate_hz must be positive".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(crate::SynthError::Scene("noise_std must be >= 0".into()));
        }
        if self.users.len() > self.m_slots {
            return Err(crate::SynthError::Scene(format!(
                "{} users exceed {} label slots",
                self.users.len(),
                self.m_slots
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveforms_are_periodic_and_bounded() {
        for w in [Waveform::Sine, Waveform::Ramp, Waveform::Burst] {
            for i in 0..50 {
                let p = i as f64 * 0.173;
                let v = w.eval(p);
                assert!(v.abs() <= 1.0 + 1e-12, "{w:?} out of range at {p}: {v}");
                let v2 = w.eval(p + 3.0);
                assert!((v - v2).abs() < 1e-9, "{w:?} not periodic at {p}");
            }
        }
    }

    #[test]
    fn standard_set_has_distinct_signatures() {
        let ks = ActivityKernel::standard_set(9);
        assert_eq!(ks.len(), 9);
        for (i, a) in ks.iter().enumerate() {
            assert_eq!(a.activity_id, i);
            for b in &ks[i + 1..] {
                assert!(
                    (a.mod_freq_hz - b.mod_freq_hz).abs() > 1e-6
                        || (a.delay_mod_amp_s - b.delay_mod_amp_s).abs() > 1e-15,
                    "kernels {} and {} indistinguishable",
                    a.activity_id,
                    b.activity_id
                );
            }
        }
    }

    #[test]
    fn subcarrier_grid_is_centered() {
        let scene = SceneSpec {
            environment_id: "t".into(),
            static_paths: vec![],
            users: vec![],
            carrier_hz: 2.4e9,
            subcarrier_spacing_hz: 312.5e3,
            n_r: 1,
            n_t: 1,
            n_sc: 30,
            t_len: 4,
            sample_rate_hz: 1000.0,
            noise_std: 0.0,
            m_slots: 6,
            rx_spacing_m: 0.06,
            tx_spacing_m: 0.06,
        };
        assert_eq!(scene.subcarrier_hz(15), 2.4e9);
        assert_eq!(scene.subcarrier_hz(16) - scene.subcarrier_hz(15), 312.5e3);
    }
}
