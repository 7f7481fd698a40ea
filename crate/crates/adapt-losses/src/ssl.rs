//! Self-supervised auxiliaries: rotation discrimination and contrastive
//! prediction of future window embeddings.

use autodiff::{Graph, Var};
use net_arch::{Bottleneck, MultiUserBackbone, RotationHead};
use rand::Rng;

use crate::LossError;

const NORM_EPS: f64 = 1e-12;

/// Binary cross-entropy of the rotation head over paired embeddings.
///
/// Both views of every sample enter the batch: `[stop_grad(z); z]` labeled
/// "unrotated" and `[stop_grad(z); z_rot]` labeled "rotated". The reference
/// branch is detached so the encoder is only pushed through the second half
/// of each pair.
pub fn rotation_pair_loss(
    g: &mut Graph,
    store: &autodiff::ParamStore,
    head: &RotationHead,
    z: Var,
    z_rot: Var,
) -> Var {
    let n = g.value(z).shape()[0];
    assert_eq!(g.value(z).shape(), g.value(z_rot).shape(), "pair shapes");
    let zd = g.detach(z);
    let pair_same = g.concat(&[zd, z], 1);
    let pair_rot = g.concat(&[zd, z_rot], 1);
    let stacked = g.concat(&[pair_same, pair_rot], 0);
    let logits = head.forward(g, store, stacked);
    let lp = g.log_softmax_last(logits);
    let labels: Vec<usize> = (0..2 * n).map(|i| usize::from(i >= n)).collect();
    let picked = g.gather_class(lp, &labels);
    let mean = g.mean_all(picked);
    g.neg(mean)
}

/// Rotation loss for the multi-user stack: embeds the batch and its
/// 180-degree rotation (both trailing axes flipped) through backbone and
/// bottleneck, then scores the pairs with [`rotation_pair_loss`].
pub fn rotation_loss_multiuser<R: Rng>(
    g: &mut Graph,
    store: &autodiff::ParamStore,
    backbone: &MultiUserBackbone,
    bottleneck: &Bottleneck,
    head: &RotationHead,
    x: Var,
    train: bool,
    rng: &mut R,
) -> Result<Var, LossError> {
    let feats = backbone.forward(g, store, x, train, rng)?;
    let z = bottleneck.forward(g, store, feats);
    let x_rot = g.flip_last2(x);
    let feats_rot = backbone.forward(g, store, x_rot, train, rng)?;
    let z_rot = bottleneck.forward(g, store, feats_rot);
    Ok(rotation_pair_loss(g, store, head, z, z_rot))
}

/// InfoNCE over predicted future embeddings, averaged across horizons.
///
/// `true_z[k]` and `pred_z[k]` hold the `(N, d)` target and predicted
/// embeddings for horizon `k`; row `i` of the prediction must retrieve row
/// `i` of the targets against the other `N - 1` in-batch negatives. With
/// `cosine` set, rows are L2-normalized before the dot product (the
/// default); otherwise raw dot products are used.
pub fn cpc_loss(
    g: &mut Graph,
    true_z: &[Var],
    pred_z: &[Var],
    temperature: f64,
    cosine: bool,
) -> Var {
    assert!(!true_z.is_empty(), "cpc_loss: no horizons");
    assert_eq!(true_z.len(), pred_z.len(), "cpc_loss: horizon count");
    assert!(temperature > 0.0, "cpc_loss: temperature must be positive");
    let n = g.value(true_z[0]).shape()[0];
    let idx: Vec<usize> = (0..n).collect();
    let mut total: Option<Var> = None;
    for (&tz, &pz) in true_z.iter().zip(pred_z) {
        assert_eq!(g.value(tz).shape(), g.value(pz).shape(), "cpc_loss shapes");
        assert_eq!(g.value(tz).shape()[0], n, "cpc_loss batch size");
        let (t, p) = if cosine {
            (
                g.l2_normalize_rows(tz, NORM_EPS),
                g.l2_normalize_rows(pz, NORM_EPS),
            )
        } else {
            (tz, pz)
        };
        let tt = g.transpose2(t);
        let scores = g.matmul(p, tt);
        let scaled = g.mul_scalar(scores, 1.0 / temperature);
        let lp = g.log_softmax_last(scaled);
        let diag = g.gather_class(lp, &idx);
        let mean = g.mean_all(diag);
        let term = g.neg(mean);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    let total = total.unwrap();
    g.mul_scalar(total, 1.0 / true_z.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::{ParamStore, Tensor};
    use ndarray::{Array2, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rotation_fixture() -> (ParamStore, RotationHead) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = RotationHead::register(&mut store, "rot", 1, &mut rng);
        (store, head)
    }

    #[test]
    fn zero_weight_head_scores_ln2() {
        let (mut store, head) = rotation_fixture();
        store.set_value(head.lin.w, Tensor::zeros(IxDyn(&[2, 2])));
        store.set_value(head.lin.b, Tensor::zeros(IxDyn(&[2])));
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = g.leaf(Tensor::from_shape_fn(IxDyn(&[5, 1]), |_| {
            rng.gen_range(-1.0..1.0)
        }));
        let zr = g.leaf(Tensor::from_shape_fn(IxDyn(&[5, 1]), |_| {
            rng.gen_range(-1.0..1.0)
        }));
        let loss = rotation_pair_loss(&mut g, &store, &head, z, zr);
        assert!((g.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn separable_views_reach_near_zero_loss() {
        let (mut store, head) = rotation_fixture();
        let mut w = Array2::<f64>::zeros((2, 2));
        w[[1, 0]] = 20.0;
        w[[1, 1]] = -20.0;
        store.set_value(head.lin.w, w.into_dyn());
        let mut g = Graph::new();
        let z = g.leaf(Tensor::ones(IxDyn(&[4, 1])));
        let zr = g.leaf(Tensor::from_elem(IxDyn(&[4, 1]), -1.0));
        let loss = rotation_pair_loss(&mut g, &store, &head, z, zr);
        assert!(g.scalar(loss) < 1e-3);
    }

    #[test]
    fn both_rotation_labels_enter_the_batch() {
        // A head that always outputs "unrotated" with margin 40 nails the
        // first half and misses the second: mean loss ~ 20, not ~0.
        let (mut store, head) = rotation_fixture();
        store.set_value(head.lin.w, Tensor::zeros(IxDyn(&[2, 2])));
        let mut b = Tensor::zeros(IxDyn(&[2]));
        b[[0]] = 20.0;
        b[[1]] = -20.0;
        store.set_value(head.lin.b, b);
        let mut g = Graph::new();
        let z = g.leaf(Tensor::ones(IxDyn(&[3, 1])));
        let zr = g.leaf(Tensor::from_elem(IxDyn(&[3, 1]), 0.5));
        let loss = rotation_pair_loss(&mut g, &store, &head, z, zr);
        assert!((g.scalar(loss) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn reference_branch_carries_no_gradient() {
        // With the head reading only the first (detached) half of each pair,
        // the embeddings receive no gradient at all.
        let (mut store, head) = rotation_fixture();
        let mut w = Array2::<f64>::zeros((2, 2));
        w[[0, 0]] = 1.3;
        w[[0, 1]] = -0.4;
        store.set_value(head.lin.w, w.into_dyn());
        let mut g = Graph::new();
        let z = g.leaf(Tensor::from_elem(IxDyn(&[2, 1]), 0.7));
        let zr = g.leaf(Tensor::from_elem(IxDyn(&[2, 1]), -0.2));
        let loss = rotation_pair_loss(&mut g, &store, &head, z, zr);
        let grads = g.backward(loss);
        if let Some(dz) = g.grad_of(&grads, z) {
            assert!(dz.iter().all(|&t| t == 0.0));
        }
        if let Some(dzr) = g.grad_of(&grads, zr) {
            assert!(dzr.iter().all(|&t| t == 0.0));
        }
    }

    fn leaf2(g: &mut Graph, rows: &[[f64; 4]]) -> Var {
        let mut t = Array2::<f64>::zeros((rows.len(), 4));
        for (i, r) in rows.iter().enumerate() {
            for (j, &x) in r.iter().enumerate() {
                t[[i, j]] = x;
            }
        }
        g.leaf(t.into_dyn())
    }

    #[test]
    fn single_sample_cpc_loss_is_exactly_zero() {
        let mut g = Graph::new();
        let t = leaf2(&mut g, &[[0.3, -1.2, 0.5, 2.0]]);
        let p = leaf2(&mut g, &[[1.0, 0.0, -0.7, 0.1]]);
        let loss = cpc_loss(&mut g, &[t], &[p], 0.07, true);
        assert_eq!(g.scalar(loss), 0.0);
    }

    #[test]
    fn identical_embeddings_score_ln_n() {
        let mut g = Graph::new();
        let row = [0.4, -0.9, 1.5, 0.2];
        let t = leaf2(&mut g, &[row, row, row]);
        let p = leaf2(&mut g, &[row, row, row]);
        let loss = cpc_loss(&mut g, &[t, t], &[p, p], 0.07, true);
        assert!((g.scalar(loss) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cpc_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        let mut draw = |n: usize| -> Vec<[f64; 4]> {
            (0..n)
                .map(|_| {
                    let mut r = [0.0; 4];
                    for x in &mut r {
                        *x = rng.gen_range(-1.5..1.5);
                    }
                    r
                })
                .collect()
        };
        let (n, tau) = (3usize, 0.2f64);
        let tz: Vec<Vec<[f64; 4]>> = vec![draw(n), draw(n)];
        let pz: Vec<Vec<[f64; 4]>> = vec![draw(n), draw(n)];

        let normalize = |r: &[f64; 4]| -> [f64; 4] {
            let norm = (r.iter().map(|x| x * x).sum::<f64>() + NORM_EPS).sqrt();
            let mut out = *r;
            for x in &mut out {
                *x /= norm;
            }
            out
        };
        let mut expect = 0.0;
        for k in 0..2 {
            let tn: Vec<[f64; 4]> = tz[k].iter().map(|r| normalize(r)).collect();
            let pn: Vec<[f64; 4]> = pz[k].iter().map(|r| normalize(r)).collect();
            let mut horizon = 0.0;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..4).map(|d| pn[i][d] * tn[j][d]).sum::<f64>() / tau
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
                horizon += lse - scores[i];
            }
            expect += horizon / n as f64;
        }
        expect /= 2.0;

        let mut g = Graph::new();
        let tvars: Vec<Var> = tz.iter().map(|rows| leaf2(&mut g, rows)).collect();
        let pvars: Vec<Var> = pz.iter().map(|rows| leaf2(&mut g, rows)).collect();
        let loss = cpc_loss(&mut g, &tvars, &pvars, tau, true);
        assert!((g.scalar(loss) - expect).abs() < 1e-12);
        assert!(g.scalar(loss) >= 0.0);
    }

    #[test]
    fn cosine_scoring_ignores_embedding_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                let mut r = [0.0; 4];
                for x in &mut r {
                    *x = rng.gen_range(-1.0..1.0);
                }
                r
            })
            .collect();
        let scaled: Vec<[f64; 4]> = rows.iter().map(|r| r.map(|x| 2.0 * x)).collect();
        let mut g = Graph::new();
        let t = leaf2(&mut g, &rows);
        let p = leaf2(&mut g, &rows);
        let ts = leaf2(&mut g, &scaled);
        let ps = leaf2(&mut g, &scaled);
        let a = cpc_loss(&mut g, &[t], &[p], 0.1, true);
        let b = cpc_loss(&mut g, &[ts], &[ps], 0.1, true);
        assert!((g.scalar(a) - g.scalar(b)).abs() < 1e-9);
        let c = cpc_loss(&mut g, &[t], &[p], 0.1, false);
        let d = cpc_loss(&mut g, &[ts], &[ps], 0.1, false);
        assert!((g.scalar(c) - g.scalar(d)).abs() > 1e-3);
    }

    #[test]
    fn joint_row_permutation_preserves_cpc_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut draw = |n: usize| -> Vec<[f64; 4]> {
            (0..n)
                .map(|_| {
                    let mut r = [0.0; 4];
                    for x in &mut r {
                        *x = rng.gen_range(-1.0..1.0);
                    }
                    r
                })
                .collect()
        };
        let t = draw(4);
        let p = draw(4);
        let perm = [2usize, 0, 3, 1];
        let tp: Vec<[f64; 4]> = perm.iter().map(|&i| t[i]).collect();
        let pp: Vec<[f64; 4]> = perm.iter().map(|&i| p[i]).collect();
        let mut g = Graph::new();
        let (tv, pv) = (leaf2(&mut g, &t), leaf2(&mut g, &p));
        let (tvp, pvp) = (leaf2(&mut g, &tp), leaf2(&mut g, &pp));
        let a = cpc_loss(&mut g, &[tv], &[pv], 0.07, true);
        let b = cpc_loss(&mut g, &[tvp], &[pvp], 0.07, true);
        assert!((g.scalar(a) - g.scalar(b)).abs() < 1e-9);
    }
}
