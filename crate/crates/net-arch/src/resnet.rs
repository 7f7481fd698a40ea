//! Residual conv backbone for single-user feature grids.

use crate::norm::{bn_forward, register_bn, BnParams};
use crate::{init, ArchError};
use autodiff::{Graph, ParamId, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    /// Stride of the first block of the stage; later blocks use 1.
    pub stride: usize,
}

/// Residual topology: stem conv -> optional max pool -> stages of two-conv
/// basic blocks with identity or 1x1-projection skips -> global average
/// pooling. 3x3 convs are padded by 1, the stem by `stem_kernel / 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetSpec {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub stages: Vec<StageSpec>,
}

impl ResNetSpec {
    /// The 18-layer configuration with a single-channel stem.
    pub fn resnet18() -> Self {
        ResNetSpec {
            in_channels: 1,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stages: vec![
                StageSpec {
                    channels: 64,
                    blocks: 2,
                    stride: 1,
                },
                StageSpec {
                    channels: 128,
                    blocks: 2,
                    stride: 2,
                },
                StageSpec {
                    channels: 256,
                    blocks: 2,
                    stride: 2,
                },
                StageSpec {
                    channels: 512,
                    blocks: 2,
                    stride: 2,
                },
            ],
        }
    }

    /// Same topology shrunk for small synthetic grids.
    pub fn desk() -> Self {
        ResNetSpec {
            in_channels: 1,
            stem_channels: 8,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            stages: vec![
                StageSpec {
                    channels: 8,
                    blocks: 1,
                    stride: 1,
                },
                StageSpec {
                    channels: 16,
                    blocks: 1,
                    stride: 2,
                },
                StageSpec {
                    channels: 32,
                    blocks: 1,
                    stride: 2,
                },
            ],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stages
            .last()
            .map(|s| s.channels)
            .unwrap_or(self.stem_channels)
    }

    pub fn register<R: Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> SingleUserBackbone {
        let stem_w = store.add_param(
            &format!("{prefix}.stem.conv.w"),
            init::he_conv(
                rng,
                &[
                    self.stem_channels,
                    self.in_channels,
                    self.stem_kernel,
                    self.stem_kernel,
                ],
            ),
        );
        let stem_bn = register_bn(store, &format!("{prefix}.stem.bn"), self.stem_channels);
        let mut blocks = Vec::new();
        let mut in_ch = self.stem_channels;
        for (si, stage) in self.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let stride = if bi == 0 { stage.stride } else { 1 };
                let name = format!("{prefix}.stage{si}.block{bi}");
                let conv1 = store.add_param(
                    &format!("{name}.conv1.w"),
                    init::he_conv(rng, &[stage.channels, in_ch, 3, 3]),
                );
                let bn1 = register_bn(store, &format!("{name}.bn1"), stage.channels);
                let conv2 = store.add_param(
                    &format!("{name}.conv2.w"),
                    init::he_conv(rng, &[stage.channels, stage.channels, 3, 3]),
                );
                let bn2 = register_bn(store, &format!("{name}.bn2"), stage.channels);
                let down = if stride != 1 || in_ch != stage.channels {
                    let dw = store.add_param(
                        &format!("{name}.down.conv.w"),
                        init::he_conv(rng, &[stage.channels, in_ch, 1, 1]),
                    );
                    let dbn = register_bn(store, &format!("{name}.down.bn"), stage.channels);
                    Some(Downsample { conv: dw, bn: dbn })
                } else {
                    None
                };
                blocks.push(BasicBlock {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    down,
                    stride,
                });
                in_ch = stage.channels;
            }
        }
        SingleUserBackbone {
            spec: self.clone(),
            stem_w,
            stem_bn,
            blocks,
        }
    }
}

#[derive(Clone, Debug)]
struct Downsample {
    conv: ParamId,
    bn: BnParams,
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: ParamId,
    bn1: BnParams,
    conv2: ParamId,
    bn2: BnParams,
    down: Option<Downsample>,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct SingleUserBackbone {
    spec: ResNetSpec,
    stem_w: ParamId,
    stem_bn: BnParams,
    blocks: Vec<BasicBlock>,
}

impl SingleUserBackbone {
    pub fn spec(&self) -> &ResNetSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    /// `(N, C, F, T)` batch to `(N, feature_dim)` features.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
    ) -> Result<Var, ArchError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(ArchError::Shape(format!(
                "expected (N, {}, F, T), got {shape:?}",
                self.spec.in_channels
            )));
        }
        let w = g.param(store, self.stem_w);
        let pad = self.spec.stem_kernel / 2;
        let mut h = g.conv2d(
            x,
            w,
            None,
            (self.spec.stem_stride, self.spec.stem_stride),
            (pad, pad),
        );
        h = bn_forward(g, store, &self.stem_bn, h, train)?;
        h = g.relu(h);
        if self.spec.stem_pool {
            h = g.maxpool2d(h, (3, 3), (2, 2));
        }
        for blk in &self.blocks {
            h = self.block_forward(g, store, blk, h, train)?;
        }
        Ok(g.global_avg_pool(h))
    }

    fn block_forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        blk: &BasicBlock,
        x: Var,
        train: bool,
    ) -> Result<Var, ArchError> {
        let w1 = g.param(store, blk.conv1);
        let mut out = g.conv2d(x, w1, None, (blk.stride, blk.stride), (1, 1));
        out = bn_forward(g, store, &blk.bn1, out, train)?;
        out = g.relu(out);
        let w2 = g.param(store, blk.conv2);
        out = g.conv2d(out, w2, None, (1, 1), (1, 1));
        out = bn_forward(g, store, &blk.bn2, out, train)?;
        let skip = match &blk.down {
            Some(d) => {
                let dw = g.param(store, d.conv);
                let s = g.conv2d(x, dw, None, (blk.stride, blk.stride), (0, 0));
                bn_forward(g, store, &d.bn, s, train)?
            }
            None => x,
        };
        let sum = g.add(out, skip);
        Ok(g.relu(sum))
    }
}
