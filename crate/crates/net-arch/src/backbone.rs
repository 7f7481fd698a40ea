//! Convolutional feature extractor for multi-user feature grids.

use crate::norm::{bn_forward, register_bn, BnParams};
use crate::{init, ArchError};
use autodiff::{Graph, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub channels: usize,
}

/// Stack of conv blocks, each conv -> batch norm -> leaky rectifier ->
/// dropout, closed by global average pooling. Convolutions are valid (no
/// padding); the feature dimension is the channel count of the last block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBackboneSpec {
    pub in_channels: usize,
    pub blocks: Vec<ConvBlockSpec>,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl ConvBackboneSpec {
    /// Profile for `(1, 270, 3000)` amplitude grids: kernels 27/15/7,
    /// strides 7/3/1, channels 32/64/128, dropout 0.2, leaky slope 0.01.
    pub fn wimans() -> Self {
        ConvBackboneSpec {
            in_channels: 1,
            blocks: vec![
                ConvBlockSpec {
                    kernel: (27, 27),
                    stride: (7, 7),
                    channels: 32,
                },
                ConvBlockSpec {
                    kernel: (15, 15),
                    stride: (3, 3),
                    channels: 64,
                },
                ConvBlockSpec {
                    kernel: (7, 7),
                    stride: (1, 1),
                    channels: 128,
                },
            ],
            dropout: 0.2,
            leaky_slope: 0.01,
        }
    }

    /// Same block structure scaled down for small synthetic grids
    /// (tens of features by tens of timesteps).
    pub fn desk() -> Self {
        ConvBackboneSpec {
            in_channels: 1,
            blocks: vec![
                ConvBlockSpec {
                    kernel: (3, 3),
                    stride: (2, 2),
                    channels: 8,
                },
                ConvBlockSpec {
                    kernel: (3, 3),
                    stride: (1, 1),
                    channels: 16,
                },
                ConvBlockSpec {
                    kernel: (3, 3),
                    stride: (1, 1),
                    channels: 32,
                },
            ],
            dropout: 0.2,
            leaky_slope: 0.01,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map(|b| b.channels).unwrap_or(0)
    }

    /// Spatial output size of the conv stack for an `(F, T)` input grid, or
    /// an error if some block consumes more rows/columns than remain.
    pub fn output_hw(&self, f: usize, t: usize) -> Result<(usize, usize), ArchError> {
        let (mut h, mut w) = (f, t);
        for (i, b) in self.blocks.iter().enumerate() {
            if h < b.kernel.0 || w < b.kernel.1 {
                return Err(ArchError::Shape(format!(
                    "block {i} kernel {:?} exceeds input ({h}, {w})",
                    b.kernel
                )));
            }
            h = (h - b.kernel.0) / b.stride.0 + 1;
            w = (w - b.kernel.1) / b.stride.1 + 1;
        }
        Ok((h, w))
    }

    pub fn register<R: Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> MultiUserBackbone {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut in_ch = self.in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            let name = format!("{prefix}.block{i}");
            let w = store.add_param(
                &format!("{name}.conv.w"),
                init::he_conv(rng, &[b.channels, in_ch, b.kernel.0, b.kernel.1]),
            );
            let bias = store.add_param(&format!("{name}.conv.b"), init::zeros(&[b.channels]));
            let bn = register_bn(store, &format!("{name}.bn"), b.channels);
            blocks.push(BlockParams {
                w,
                b: bias,
                bn,
                stride: b.stride,
            });
            in_ch = b.channels;
        }
        MultiUserBackbone {
            spec: self.clone(),
            blocks,
        }
    }
}

#[derive(Clone, Debug)]
struct BlockParams {
    w: ParamId,
    b: ParamId,
    bn: BnParams,
    stride: (usize, usize),
}

/// Registered conv backbone; holds parameter ids, not values.
#[derive(Clone, Debug)]
pub struct MultiUserBackbone {
    spec: ConvBackboneSpec,
    blocks: Vec<BlockParams>,
}

impl MultiUserBackbone {
    pub fn spec(&self) -> &ConvBackboneSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    /// `(N, C, F, T)` batch to `(N, feature_dim)` features. Training mode
    /// uses batch normalization statistics and live dropout; eval mode is
    /// deterministic and leaves running statistics untouched.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ArchError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(ArchError::Shape(format!(
                "expected (N, {}, F, T), got {shape:?}",
                self.spec.in_channels
            )));
        }
        self.spec.output_hw(shape[2], shape[3])?;
        let mut h = x;
        for blk in &self.blocks {
            let w = g.param(store, blk.w);
            let b = g.param(store, blk.b);
            h = g.conv2d(h, w, Some(b), blk.stride, (0, 0));
            h = bn_forward(g, store, &blk.bn, h, train)?;
            h = g.leaky_relu(h, self.spec.leaky_slope);
            h = g.dropout(h, self.spec.dropout, train, rng);
        }
        Ok(g.global_avg_pool(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wimans_grid_reaches_gap_with_room_to_spare() {
        let spec = ConvBackboneSpec::wimans();
        assert_eq!(spec.output_hw(270, 3000).unwrap(), (1, 131));
        assert_eq!(spec.feature_dim(), 128);
    }

    #[test]
    fn undersized_grid_is_rejected() {
        let spec = ConvBackboneSpec::wimans();
        assert!(spec.output_hw(20, 3000).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic_and_row_consistent() {
        let spec = ConvBackboneSpec::desk();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = spec.register(&mut store, "f", &mut rng);

        let mut sample = autodiff::Tensor::zeros(IxDyn(&[1, 1, 16, 40]));
        let mut fill = ChaCha8Rng::seed_from_u64(9);
        sample.mapv_inplace(|_| rand::Rng::gen_range(&mut fill, -1.0..1.0));
        let mut batch = autodiff::Tensor::zeros(IxDyn(&[2, 1, 16, 40]));
        for i in 0..2 {
            for f in 0..16 {
                for t in 0..40 {
                    batch[IxDyn(&[i, 0, f, t])] = sample[IxDyn(&[0, 0, f, t])];
                }
            }
        }
        let mut g = Graph::new();
        let x = g.leaf(batch);
        let out = net.forward(&mut g, &store, x, false, &mut rng).unwrap();
        let v = g.value(out);
        assert_eq!(v.shape(), &[2, 32]);
        for d in 0..32 {
            assert_eq!(
                v[IxDyn(&[0, d])].to_bits(),
                v[IxDyn(&[1, d])].to_bits(),
                "identical inputs disagree at feature {d}"
            );
        }
        // No training pass ran: running statistics must be untouched.
        assert!(g.take_buffer_updates().is_empty());
    }

    #[test]
    fn train_forward_queues_running_statistic_updates() {
        let spec = ConvBackboneSpec::desk();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = spec.register(&mut store, "f", &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(autodiff::Tensor::ones(IxDyn(&[2, 1, 16, 40])));
        net.forward(&mut g, &store, x, true, &mut rng).unwrap();
        let updates = g.take_buffer_updates();
        // Two buffers per block.
        assert_eq!(updates.len(), 2 * spec.blocks.len());
        for u in &updates {
            assert!(u.value.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn same_seed_registers_identical_parameters() {
        let spec = ConvBackboneSpec::desk();
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        spec.register(&mut s1, "f", &mut r1);
        spec.register(&mut s2, "f", &mut r2);
        assert_eq!(s1.len(), s2.len());
        for (a, b) in s1.ids().zip(s2.ids()) {
            assert_eq!(s1.name(a), s2.name(b));
            let (va, vb) = (s1.value(a), s2.value(b));
            assert_eq!(va.shape(), vb.shape());
            for (x, y) in va.iter().zip(vb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
