//! Seeded weight initialization.

use autodiff::Tensor;
use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian tensor with the given element standard deviation, filled in
/// row-major order so a fixed RNG yields a fixed tensor.
pub(crate) fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).expect("shape matches data")
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}

pub(crate) fn ones(shape: &[usize]) -> Tensor {
    Tensor::ones(IxDyn(shape))
}

/// He initialization for a conv kernel `(out, in, kh, kw)`.
pub(crate) fn he_conv<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    normal_tensor(rng, shape, (2.0 / fan_in as f64).sqrt())
}

/// He initialization for a linear weight `(in, out)`.
pub(crate) fn he_linear<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Tensor {
    normal_tensor(rng, &[in_dim, out_dim], (2.0 / in_dim as f64).sqrt())
}
