//! Centered finite-difference gradient checking.
//!
//! The checker perturbs one parameter component at a time, so it is quadratic
//! in parameter count; callers keep the instances tiny. At f64 with
//! `h = 1e-5 * max(1, |x|)` the truncation plus rounding error lands around
//! 1e-9 relative, leaving plenty of margin below the 1e-4 gates used in
//! tests.

/// Numeric gradient of `f` at `x0` by centered differences.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64]) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        let h = 1e-5 * x0[i].abs().max(1.0);
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Maximum per-component relative error between two gradients. The
/// denominator is floored so that agreement between two near-zero components
/// does not blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// One gradient-check result: analytic vs. centered-difference gradients and
/// their worst relative disagreement.
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradCheck {
    /// Run a check for a scalar function of a flat parameter vector. The
    /// closure must build the full forward pass from the given values and
    /// return (loss value, analytic gradient), typically via a tape.
    pub fn run(
        x0: &[f64],
        eval: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
    ) -> GradCheck {
        let (_, analytic) = eval(x0);
        let mut value_only = |x: &[f64]| eval(x).0;
        let numeric = finite_diff_grad(&mut value_only, x0);
        let err = max_rel_err(&analytic, &numeric);
        GradCheck {
            analytic,
            numeric,
            max_rel_err: err,
        }
    }
}
