//! Synthetic multi-user Wi-Fi CSI generator.
//!
//! The channel frequency response is a superposition of propagation paths
//!
//! ```text
//! H_{m,n}(k,t) = sum_l alpha_l(t) * exp(-j 2 pi f_k tau_l(t)) * exp(j 2 pi f_D,l t)
//! ```
//!
//! over static paths plus each user's paths, with additive circular complex
//! Gaussian noise. Human activity enters as bounded time variation of a
//! user's path parameters (delay, amplitude, Doppler), so class identity is
//! a physical signature rather than an arbitrary texture. Because phases are
//! carrier-dependent (`delta_phi = -2 pi f_k delta_tau`, and Doppler scales
//! with carrier through the radial-speed relation `f_D = v f_c / c`), moving
//! a scene from 2.4 GHz to 5 GHz shifts the data distribution the way a real
//! re-deployment does while ground truth stays fixed.
//!
//! Everything is a pure function of (scene, seed): same inputs, bit-identical
//! tensors.

mod benchmark;
mod render;
mod scene;

pub use benchmark::{
    generate_benchmark, sample_label_sets, BenchmarkConfig, BenchmarkPaths, ShiftKind,
};
pub use render::{make_shift_pair, make_shift_pair_to, render_csi};
pub use scene::{ActivityKernel, PathSpec, SceneSpec, UserSpec, Waveform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene: {0}")]
    Scene(String),

    #[error("non-finite modulator output for activity {activity} at t={t}")]
    NonFiniteModulator { activity: usize, t: f64 },

    #[error(transparent)]
    Csi(#[from] csi_core::CsiError),
}
