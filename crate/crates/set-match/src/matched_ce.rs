//! Cost matrix construction and matched cross-entropy.

use crate::hungarian::hungarian;
use crate::MatchError;
use autodiff::{Graph, Var};
use csi_core::PaddedLabelVector;
use ndarray::Array2;

/// Additive guard inside the cost-matrix log.
pub const EPS_LOG: f64 = 1e-8;

/// Assignment cost `Q[i][j] = -log(slot_probs[i][y_j] + EPS_LOG)` of giving
/// slot `i` the class of ground-truth slot `j`. `slot_probs` is `(M, K+1)`
/// with rows summing to one; the last class is "no person". The guard can
/// push `p + eps` past 1 for a fully confident row, so the log is clamped at
/// zero to keep costs nonnegative.
pub fn build_cost_matrix(
    slot_probs: &Array2<f64>,
    labels: &PaddedLabelVector,
) -> Result<Array2<f64>, MatchError> {
    let (m, c) = slot_probs.dim();
    if m != labels.m() {
        return Err(MatchError::Shape(format!(
            "{m} probability rows vs {} label slots",
            labels.m()
        )));
    }
    if c < 2 {
        return Err(MatchError::Shape("need at least 2 classes".into()));
    }
    if slot_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(MatchError::Probability(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    for (i, row) in slot_probs.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(MatchError::Probability(format!(
                "row {i} sums to {s}, not 1"
            )));
        }
    }
    let targets = labels.to_class_indices(c - 1)?;
    Ok(Array2::from_shape_fn((m, m), |(i, j)| {
        let cost = -(slot_probs[(i, targets[j])] + EPS_LOG).ln();
        cost.max(0.0)
    }))
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Set-prediction loss for one sample: softmax the slot logits, match slots
/// to padded labels by minimum-cost assignment on the un-smoothed
/// probabilities, then average label-smoothed cross-entropy over slots
/// against the matched classes. Smoothed target mass is
/// `(1-s) * onehot + s / (K+1)`. Returns the loss node and the permutation
/// (`mapping[i]` = ground-truth slot matched to prediction slot `i`); the
/// permutation is a constant of the backward pass.
pub fn matched_cross_entropy(
    g: &mut Graph,
    slot_logits: Var,
    labels: &PaddedLabelVector,
    smoothing: f64,
) -> Result<(Var, Vec<usize>), MatchError> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(MatchError::Smoothing(smoothing));
    }
    let value = g.value(slot_logits).clone();
    let value2 = value
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| MatchError::Shape(e.to_string()))?;
    let (m, c) = value2.dim();
    if m != labels.m() {
        return Err(MatchError::Shape(format!(
            "{m} logit rows vs {} label slots",
            labels.m()
        )));
    }
    let probs = softmax_rows(&value2);
    let q = build_cost_matrix(&probs, labels)?;
    let (mapping, _) = hungarian(&q);

    let targets = labels.to_class_indices(c - 1)?;
    let matched: Vec<usize> = mapping.iter().map(|&j| targets[j]).collect();

    let lp = g.log_softmax_last(slot_logits);
    let picked = g.gather_class(lp, &matched);
    let row_sum = g.sum_axis(lp, 1);
    let confident = g.mul_scalar(picked, 1.0 - smoothing);
    let spread = g.mul_scalar(row_sum, smoothing / c as f64);
    let per_slot = g.add(confident, spread);
    let mean = g.mean_all(per_slot);
    let loss = g.neg(mean);
    Ok((loss, mapping))
}
