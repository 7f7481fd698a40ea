//! Feature-grid helpers shared by training and self-supervision.

use autodiff::{Graph, Tensor, Var};
use ndarray::{Array3, Axis, IxDyn};

/// 180-degree rotation of a `(1, F, T)` feature grid: both non-channel axes
/// reversed. Involution; preserves the value multiset.
pub fn rotate180(x: &Array3<f64>) -> Array3<f64> {
    let mut out = x.clone();
    out.invert_axis(Axis(1));
    out.invert_axis(Axis(2));
    out
}

/// Tape version of [`rotate180`] for batched `(N, C, F, T)` inputs.
pub fn rotate180_var(g: &mut Graph, x: Var) -> Var {
    g.flip_last2(x)
}

/// Stack `(1, F, T)` feature grids into one `(N, 1, F, T)` batch tensor.
/// All samples must share the same grid shape.
pub fn batch_features(samples: &[&Array3<f64>]) -> Result<Tensor, crate::ArchError> {
    let first = samples
        .first()
        .ok_or_else(|| crate::ArchError::Shape("empty batch".into()))?
        .dim();
    let (c, f, t) = first;
    let mut out = Tensor::zeros(IxDyn(&[samples.len(), c, f, t]));
    for (i, s) in samples.iter().enumerate() {
        if s.dim() != first {
            return Err(crate::ArchError::Shape(format!(
                "sample {i} has shape {:?}, batch expects {:?}",
                s.dim(),
                first
            )));
        }
        for ci in 0..c {
            for fi in 0..f {
                for ti in 0..t {
                    out[IxDyn(&[i, ci, fi, ti])] = s[(ci, fi, ti)];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array3::from_shape_fn((1, 5, 7), |_| rng.gen_range(-1.0..1.0));
        assert_eq!(rotate180(&rotate180(&x)), x);
    }

    #[test]
    fn single_cell_moves_to_mirrored_position() {
        let mut x = Array3::zeros((1, 4, 6));
        x[(0, 1, 2)] = 3.5;
        let r = rotate180(&x);
        assert_eq!(r[(0, 4 - 1 - 1, 6 - 1 - 2)], 3.5);
        assert_eq!(r.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn rotation_matches_index_reversal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (f, t) = (6, 9);
        let x = Array3::from_shape_fn((1, f, t), |_| rng.gen_range(-2.0..2.0));
        let r = rotate180(&x);
        let mut sorted_x: Vec<f64> = x.iter().copied().collect();
        let mut sorted_r: Vec<f64> = r.iter().copied().collect();
        sorted_x.sort_by(f64::total_cmp);
        sorted_r.sort_by(f64::total_cmp);
        assert_eq!(sorted_x, sorted_r);
        for fi in 0..f {
            for ti in 0..t {
                assert_eq!(r[(0, fi, ti)], x[(0, f - 1 - fi, t - 1 - ti)]);
            }
        }
    }

    #[test]
    fn tape_rotation_agrees_with_array_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array3::from_shape_fn((1, 3, 4), |_| rng.gen_range(-1.0..1.0));
        let b = Array3::from_shape_fn((1, 3, 4), |_| rng.gen_range(-1.0..1.0));
        let batch = batch_features(&[&a, &b]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(batch);
        let r = rotate180_var(&mut g, x);
        let rv = g.value(r);
        let ra = rotate180(&a);
        let rb = rotate180(&b);
        for fi in 0..3 {
            for ti in 0..4 {
                assert_eq!(rv[IxDyn(&[0, 0, fi, ti])], ra[(0, fi, ti)]);
                assert_eq!(rv[IxDyn(&[1, 0, fi, ti])], rb[(0, fi, ti)]);
            }
        }
    }

    #[test]
    fn batching_rejects_mixed_shapes() {
        let a = Array3::<f64>::zeros((1, 3, 4));
        let b = Array3::<f64>::zeros((1, 3, 5));
        assert!(batch_features(&[&a, &b]).is_err());
    }
}
