//! Linear heads: bottleneck, slot classifier, rotation head, and the plain
//! activity classifier.

use crate::{init, ArchError};
use autodiff::{Graph, ParamId, ParamStore, Var};
use rand::Rng;

/// One fully connected layer with He-initialized weight and zero bias.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_param(&format!("{name}.w"), init::he_linear(rng, in_dim, out_dim));
        let b = store.add_param(&format!("{name}.b"), init::zeros(&[out_dim]));
        LinearLayer {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, b)
    }
}

/// Single linear map between the backbone feature space and the embedding
/// the classifier operates in.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub lin: LinearLayer,
}

impl Bottleneck {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        Bottleneck {
            lin: LinearLayer::register(store, prefix, feature_dim, embed_dim, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.lin.out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.lin.forward(g, store, x)
    }
}

/// Slot-structured classifier: embedding to `M * (K+1)` logits; slot `i`
/// occupies columns `i*(K+1) .. (i+1)*(K+1)`.
#[derive(Clone, Debug)]
pub struct SlotClassifier {
    pub lin: LinearLayer,
    pub slots: usize,
    pub classes: usize,
}

impl SlotClassifier {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embed_dim: usize,
        slots: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        SlotClassifier {
            lin: LinearLayer::register(store, prefix, embed_dim, slots * classes, rng),
            slots,
            classes,
        }
    }

    /// `(N, embed)` to flat logits `(N, M*(K+1))`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.lin.forward(g, store, x)
    }

    /// Slot logits of batch row `i`, reshaped to `(M, K+1)`.
    pub fn sample_logits(&self, g: &mut Graph, flat: Var, i: usize) -> Result<Var, ArchError> {
        let shape = g.value(flat).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.slots * self.classes {
            return Err(ArchError::Shape(format!(
                "expected (N, {}), got {shape:?}",
                self.slots * self.classes
            )));
        }
        if i >= shape[0] {
            return Err(ArchError::Shape(format!(
                "row {i} out of range for batch of {}",
                shape[0]
            )));
        }
        let row = g.narrow(flat, 0, i, 1);
        Ok(g.reshape(row, &[self.slots, self.classes]))
    }
}

/// Binary head over the concatenation of an embedding and the embedding of
/// the rotated view.
#[derive(Clone, Debug)]
pub struct RotationHead {
    pub lin: LinearLayer,
}

impl RotationHead {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        RotationHead {
            lin: LinearLayer::register(store, prefix, 2 * embed_dim, 2, rng),
        }
    }

    /// `(N, 2*embed)` paired embeddings to `(N, 2)` rotation logits.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, paired: Var) -> Var {
        self.lin.forward(g, store, paired)
    }
}

/// Plain `embed -> K` classifier for single-user recognition.
#[derive(Clone, Debug)]
pub struct ActivityClassifier {
    pub lin: LinearLayer,
    pub classes: usize,
}

impl ActivityClassifier {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        embed_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        ActivityClassifier {
            lin: LinearLayer::register(store, prefix, embed_dim, classes, rng),
            classes,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.lin.forward(g, store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Tensor;
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weight_slot_classifier_gives_uniform_softmax() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = SlotClassifier::register(&mut store, "c", 16, 6, 10, &mut rng);
        store.set_value(head.lin.w, Tensor::zeros(IxDyn(&[16, 60])));
        store.set_value(head.lin.b, Tensor::zeros(IxDyn(&[60])));

        let mut g = Graph::new();
        let mut feats = Tensor::zeros(IxDyn(&[1, 16]));
        feats.mapv_inplace(|_| rng.gen_range(-2.0..2.0));
        let x = g.leaf(feats);
        let flat = head.forward(&mut g, &store, x);
        assert!(g.value(flat).iter().all(|v| *v == 0.0));

        let slot = head.sample_logits(&mut g, flat, 0).unwrap();
        let probs = g.softmax_last(slot);
        let pv = g.value(probs);
        assert_eq!(pv.shape(), &[6, 10]);
        for v in pv.iter() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn slot_view_indexes_rows_and_errors_out_of_range() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = SlotClassifier::register(&mut store, "c", 8, 3, 4, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_shape_fn(IxDyn(&[2, 8]), |ix| {
            (ix[0] * 8 + ix[1]) as f64
        }));
        let flat = head.forward(&mut g, &store, x);
        let row1 = head.sample_logits(&mut g, flat, 1).unwrap();
        assert_eq!(g.value(row1).shape(), &[3, 4]);
        let flat_v = g.value(flat).clone();
        let row1_v = g.value(row1);
        for s in 0..3 {
            for c in 0..4 {
                assert_eq!(row1_v[IxDyn(&[s, c])], flat_v[IxDyn(&[1, s * 4 + c])]);
            }
        }
        assert!(head.sample_logits(&mut g, flat, 2).is_err());
    }

    #[test]
    fn rotation_head_takes_paired_embeddings() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = RotationHead::register(&mut store, "r", 12, &mut rng);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(IxDyn(&[3, 24])));
        let out = head.forward(&mut g, &store, x);
        assert_eq!(g.value(out).shape(), &[3, 2]);
    }
}
