//! Centroid pseudo-labels in an augmented embedding space.
//!
//! Embeddings gain a constant 1 coordinate and are L2-normalized, so even a
//! zero embedding has a well-defined direction. Centroids start as
//! prediction-weighted means, samples go to the nearest centroid by cosine
//! distance, and one refinement round recomputes centroids from the hard
//! assignment before the final labeling.

use autodiff::{Graph, Var};
use ndarray::Array2;

use crate::LossError;

/// Soft-mass threshold below which an initial centroid falls back to the
/// global mean (softmax probabilities never trip this; guards degenerate
/// hand-built inputs).
const EPS_MASS: f64 = 1e-30;

fn augment_normalize(features: &Array2<f64>) -> Array2<f64> {
    let (n, d) = features.dim();
    let mut out = Array2::<f64>::zeros((n, d + 1));
    for i in 0..n {
        let mut sq = 1.0;
        for j in 0..d {
            out[[i, j]] = features[[i, j]];
            sq += features[[i, j]] * features[[i, j]];
        }
        out[[i, d]] = 1.0;
        let norm = sq.sqrt();
        for j in 0..=d {
            out[[i, j]] /= norm;
        }
    }
    out
}

fn nearest(z: &Array2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let (n, da) = z.dim();
    let k = centroids.nrows();
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for c in 0..k {
            let mut dot = 0.0;
            let mut sq = 0.0;
            for j in 0..da {
                dot += z[[i, j]] * centroids[[c, j]];
                sq += centroids[[c, j]] * centroids[[c, j]];
            }
            // Rows of `z` are unit vectors, so this is the cosine; a zero
            // centroid scores 0, i.e. no preference.
            let sim = dot / sq.sqrt().max(1e-12);
            // Strict comparison keeps the lowest class index on ties.
            if sim > best {
                best = sim;
                arg = c;
            }
        }
        labels[i] = arg;
    }
    labels
}

/// One round of centroid pseudo-labeling.
///
/// `features` is the `(n, d)` embedding batch, `probs` the `(n, K)` class
/// probabilities of the current model. Returns hard labels and the refined
/// `(K, d+1)` centroids in the augmented space. A class that captures no
/// samples keeps its initial prediction-weighted centroid.
pub fn pseudo_label_round(
    features: &Array2<f64>,
    probs: &Array2<f64>,
) -> Result<(Vec<usize>, Array2<f64>), LossError> {
    let (n, d) = features.dim();
    if n == 0 {
        return Err(LossError::Empty("pseudo_label_round needs samples"));
    }
    if probs.nrows() != n {
        return Err(LossError::Shape(format!(
            "features have {n} rows, probs {}",
            probs.nrows()
        )));
    }
    let k = probs.ncols();
    for row in probs.rows() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < 0.0) {
            return Err(LossError::Shape(format!(
                "probability row sums to {s} or has negative entries"
            )));
        }
    }

    let z = augment_normalize(features);
    let da = d + 1;
    let global_mean = {
        let mut m = vec![0.0; da];
        for i in 0..n {
            for j in 0..da {
                m[j] += z[[i, j]] / n as f64;
            }
        }
        m
    };

    let mut init = Array2::<f64>::zeros((k, da));
    for c in 0..k {
        let mass: f64 = (0..n).map(|i| probs[[i, c]]).sum();
        if mass <= EPS_MASS {
            for j in 0..da {
                init[[c, j]] = global_mean[j];
            }
            continue;
        }
        for i in 0..n {
            let w = probs[[i, c]] / mass;
            for j in 0..da {
                init[[c, j]] += w * z[[i, j]];
            }
        }
    }

    let first = nearest(&z, &init);

    let mut refined = init.clone();
    let mut counts = vec![0usize; k];
    let mut sums = Array2::<f64>::zeros((k, da));
    for (i, &c) in first.iter().enumerate() {
        counts[c] += 1;
        for j in 0..da {
            sums[[c, j]] += z[[i, j]];
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..da {
                refined[[c, j]] = sums[[c, j]] / counts[c] as f64;
            }
        }
    }

    let labels = nearest(&z, &refined);
    Ok((labels, refined))
}

/// Mean cross-entropy of `(N, K)` logits against hard pseudo-labels.
pub fn pseudo_label_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let shape = g.value(logits).shape().to_vec();
    assert_eq!(shape.len(), 2, "pseudo_label_loss: need (N, K) logits");
    assert_eq!(shape[0], labels.len(), "pseudo_label_loss: label count");
    let lp = g.log_softmax_last(logits);
    let picked = g.gather_class(lp, labels);
    let mean = g.mean_all(picked);
    g.neg(mean)
}
