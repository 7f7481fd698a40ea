//! Entropy and information-maximization terms.
//!
//! All graph functions treat the last axis as the class lane and accept any
//! leading batch shape. `im_multi` works on slot probabilities `(N, M, K+1)`
//! where class `K` means "slot empty"; its diversity term weights each slot's
//! activity mass by the slot's occupancy probability so empty slots cannot
//! fake diversity.

use autodiff::{Graph, Var};

use crate::{EPS_ENTROPY, EPS_OCCUPANCY_MASS};

/// `-sum_k p_k * ln(p_k + eps)`. The guard keeps one-hot vectors finite at
/// the cost of a bias of at most `|ln(1 + eps)| + len * eps`.
pub fn shannon_entropy(p: &[f64], eps: f64) -> f64 {
    -p.iter().map(|&x| x * (x + eps).ln()).sum::<f64>()
}

fn check_probs(g: &Graph, v: Var, what: &str) {
    let val = g.value(v);
    assert!(val.ndim() >= 2, "{what}: need a batch of probability rows");
    let k = val.shape()[val.ndim() - 1];
    let rows = val.len() / k;
    let flat = val.view().into_shape((rows, k)).expect("contiguous probs");
    for row in flat.rows() {
        let mut s = 0.0;
        for &x in row {
            assert!(x >= 0.0 && x.is_finite(), "{what}: negative or non-finite");
            s += x;
        }
        assert!((s - 1.0).abs() <= 1e-5, "{what}: row sums to {s}, not 1");
    }
}

/// `sum_k p_k * ln(p_k + eps)` of a probability vector node, i.e. `-H(p)`.
fn neg_entropy_node(g: &mut Graph, p: Var) -> Var {
    let shifted = g.add_scalar(p, EPS_ENTROPY);
    let lp = g.ln(shifted);
    let prod = g.mul(p, lp);
    g.sum_all(prod)
}

/// Mean Shannon entropy of every probability row in `probs`; the
/// sharpness term of information maximization.
pub fn conditional_entropy_loss(g: &mut Graph, probs: Var) -> Var {
    check_probs(g, probs, "conditional_entropy_loss");
    let val = g.value(probs);
    let rows = (val.len() / val.shape()[val.ndim() - 1]) as f64;
    let neg_sum = neg_entropy_node(g, probs);
    g.mul_scalar(neg_sum, -1.0 / rows)
}

/// Negative entropy of the batch marginal over all rows and classes,
/// including the empty-slot class when present.
pub fn standard_gent(g: &mut Graph, probs: Var) -> Var {
    check_probs(g, probs, "standard_gent");
    let val = g.value(probs);
    let k = val.shape()[val.ndim() - 1];
    let rows = val.len() / k;
    let flat = g.reshape(probs, &[rows, k]);
    let marginal = g.mean_axis(flat, 0);
    neg_entropy_node(g, marginal)
}

/// `1 - p[.., K]` for slot probabilities `(N, M, K+1)`; shape `(N, M)`.
pub fn occupancy_probability(g: &mut Graph, slot_probs: Var) -> Var {
    let shape = g.value(slot_probs).shape().to_vec();
    assert_eq!(shape.len(), 3, "occupancy_probability: need (N, M, K+1)");
    let (n, m, c) = (shape[0], shape[1], shape[2]);
    let empty = g.narrow(slot_probs, 2, c - 1, 1);
    let empty = g.reshape(empty, &[n, m]);
    let neg = g.neg(empty);
    g.add_scalar(neg, 1.0)
}

/// Negative entropy of the occupancy-weighted activity marginal.
///
/// Each slot's activity probabilities are scaled by that slot's occupancy
/// before averaging; the marginal is renormalized over the `K` activity
/// classes only. When the total occupancy mass falls below
/// [`EPS_OCCUPANCY_MASS`] the marginal is undefined and the result is a
/// constant zero carrying no gradient.
pub fn occupancy_weighted_gent(g: &mut Graph, slot_probs: Var) -> Var {
    check_probs(g, slot_probs, "occupancy_weighted_gent");
    let shape = g.value(slot_probs).shape().to_vec();
    assert_eq!(shape.len(), 3, "occupancy_weighted_gent: need (N, M, K+1)");
    let (n, m, c) = (shape[0], shape[1], shape[2]);
    let activity = g.narrow(slot_probs, 2, 0, c - 1);
    let occ = occupancy_probability(g, slot_probs);
    let weighted = g.mul_expand_last(activity, occ);
    let flat = g.reshape(weighted, &[n * m, c - 1]);
    let unnorm = g.mean_axis(flat, 0);
    let mass = g.sum_all(unnorm);
    if g.scalar(mass) < EPS_OCCUPANCY_MASS {
        return g.scalar_leaf(0.0);
    }
    let marginal = g.div_by_scalar(unnorm, mass);
    neg_entropy_node(g, marginal)
}

/// Information-maximization objective over slot probabilities:
/// conditional entropy minus the occupancy-weighted marginal G-entropy.
pub fn im_multi(g: &mut Graph, slot_probs: Var) -> Var {
    let ent = conditional_entropy_loss(g, slot_probs);
    let gent = occupancy_weighted_gent(g, slot_probs);
    g.sub(ent, gent)
}

/// Single-user information maximization over `(N, K)` class probabilities:
/// conditional entropy minus the standard marginal G-entropy.
pub fn im_standard(g: &mut Graph, class_probs: Var) -> Var {
    let ent = conditional_entropy_loss(g, class_probs);
    let gent = standard_gent(g, class_probs);
    g.sub(ent, gent)
}
