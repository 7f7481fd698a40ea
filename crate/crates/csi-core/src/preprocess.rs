//! The two preprocessing pipelines: amplitude flattening and per-receiver
//! antenna phase ratio.

use crate::{CsiError, CsiTensor, PreprocessQuality};
use ndarray::Array3;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Flatten a raw CSI block to time-major amplitude features `(1, T, F)` with
/// `F = N_sc * N_t * N_r`. The spatial flatten order is subcarrier-fastest:
/// `f = k + N_sc * (n + N_t * m)` for rx antenna `m`, tx antenna `n`,
/// subcarrier `k`. Works for any antenna/subcarrier counts.
pub fn amplitude_flatten(raw: &CsiTensor) -> Array3<f64> {
    let (t_len, n_r, n_t, n_sc) = raw.dims();
    let f_len = n_sc * n_t * n_r;
    let mut out = Array3::<f64>::zeros((1, t_len, f_len));
    for t in 0..t_len {
        for m in 0..n_r {
            for n in 0..n_t {
                for k in 0..n_sc {
                    let f = k + n_sc * (n + n_t * m);
                    out[[0, t, f]] = raw.values[[t, m, n, k]].norm();
                }
            }
        }
    }
    out
}

/// Amplitude preprocessing for the dense 3x3x30 MIMO profile: enforces the
/// expected block shape (T=3000, N_r=N_t=3, N_sc=30) and returns `(1, 3000,
/// 270)` amplitudes in the time-major layout that profile stores on disk.
pub fn amplitude_preprocess(raw: &CsiTensor) -> Result<Array3<f64>, CsiError> {
    let dims = raw.dims();
    if dims != (3000, 3, 3, 30) {
        return Err(CsiError::Profile(format!(
            "amplitude profile expects (3000, 3, 3, 30) raw CSI, got {dims:?}"
        )));
    }
    Ok(amplitude_flatten(raw))
}

/// Phase of `h1 / h2` in `(-pi, pi]`, or 0 when the denominator is exactly
/// zero (counted by the caller).
fn ratio_angle(h1: Complex64, h2: Complex64) -> f64 {
    let prod = h1 * h2.conj();
    let a = prod.im.atan2(prod.re);
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Phase-ratio preprocessing for antenna-array profiles: the raw block has 1
/// tx antenna and `receivers` groups of co-located rx antennas; for each
/// group the phase of the ratio between its first two antennas is taken per
/// subcarrier and time step. Output is canonical `(1, F, target_t)` with
/// `F = receivers * N_sc`, rows ordered subcarrier-fastest (`f = k + N_sc *
/// r`). Time is standardized to `target_t`: truncated from the end when
/// longer, zero-padded at the end when shorter.
///
/// A zero-valued denominator antenna yields angle 0 for that cell and bumps
/// the returned quality counter.
pub fn phase_ratio_preprocess(
    raw: &CsiTensor,
    receivers: usize,
    target_t: usize,
) -> Result<(Array3<f64>, PreprocessQuality), CsiError> {
    let (t_len, n_r, n_t, n_sc) = raw.dims();
    if n_t != 1 {
        return Err(CsiError::Profile(format!(
            "phase-ratio profile expects 1 tx antenna, got {n_t}"
        )));
    }
    if receivers == 0 || n_r % receivers != 0 || n_r / receivers < 2 {
        return Err(CsiError::Profile(format!(
            "cannot group {n_r} antennas into {receivers} receivers of >= 2 antennas"
        )));
    }
    let group = n_r / receivers;
    let f_len = receivers * n_sc;
    let mut out = Array3::<f64>::zeros((1, f_len, target_t));
    let mut quality = PreprocessQuality::default();
    let t_used = t_len.min(target_t);
    for r in 0..receivers {
        let (a1, a2) = (r * group, r * group + 1);
        for k in 0..n_sc {
            let f = k + n_sc * r;
            for t in 0..t_used {
                let h1 = raw.values[[t, a1, 0, k]];
                let h2 = raw.values[[t, a2, 0, k]];
                if h2.re == 0.0 && h2.im == 0.0 {
                    quality.zero_denominator_cells += 1;
                    // out already zero
                } else {
                    out[[0, f, t]] = ratio_angle(h1, h2);
                }
            }
        }
    }
    Ok((out, quality))
}

/// Transpose time-major features `(1, T, F)` to the canonical `(1, F, T)`
/// model layout.
pub fn to_canonical_features(time_major: &Array3<f64>) -> Array3<f64> {
    let (c, t_len, f_len) = time_major.dim();
    debug_assert_eq!(c, 1);
    let mut out = Array3::<f64>::zeros((1, f_len, t_len));
    for t in 0..t_len {
        for f in 0..f_len {
            out[[0, f, t]] = time_major[[0, t, f]];
        }
    }
    out
}
