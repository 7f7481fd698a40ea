//! Model stacks, checkpoint attach, and eval-mode forward helpers.
//!
//! A stack is registered into a fresh [`ParamStore`] in a fixed creation
//! order; loading a checkpoint re-registers the same architecture into a
//! scratch store and then adopts the stored values, so slot ids always
//! line up with the registration order. Slot names are cross-checked to
//! catch architecture/checkpoint mismatches early.

use std::path::Path;

use autodiff::{Graph, ParamStore, Var};
use ndarray::{Array2, Array3, Axis, Ix2};
use net_arch::{
    batch_features, load_checkpoint, ActivityClassifier, Bottleneck, ConvBackboneSpec, CpcSpec,
    CpcStack, MultiUserBackbone, ResNetSpec, RotationHead, SingleUserBackbone, SlotClassifier,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::TrainError;

/// Store-name prefix of the classifier that adaptation must not touch.
pub const CLASSIFIER_PREFIX: &str = "classifier";

const BACKBONE_PREFIX: &str = "backbone";
const BOTTLENECK_PREFIX: &str = "bottleneck";
const ROTATION_PREFIX: &str = "rotation";
pub(crate) const CPC_PREFIX: &str = "cpc";

/// Multi-user model shape: conv backbone, bottleneck width, M slots with
/// K+1 classes each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuArchitecture {
    pub backbone: ConvBackboneSpec,
    pub embed_dim: usize,
    pub slots: usize,
    pub classes: usize,
}

impl MuArchitecture {
    /// WiMANS-scale model: 128-d features, 128-d bottleneck, M=6, K+1=10.
    pub fn paper() -> Self {
        MuArchitecture {
            backbone: ConvBackboneSpec::wimans(),
            embed_dim: 128,
            slots: 6,
            classes: 10,
        }
    }

    /// Small model for synthetic benchmarks: M slots, K activities plus
    /// the no-person class.
    pub fn desk(slots: usize, activities: usize) -> Self {
        MuArchitecture {
            backbone: ConvBackboneSpec::desk(),
            embed_dim: 32,
            slots,
            classes: activities + 1,
        }
    }
}

/// Registered multi-user stack; ids refer to the store it was built
/// against (or a value-compatible loaded store).
pub struct MuStack {
    pub backbone: MultiUserBackbone,
    pub bottleneck: Bottleneck,
    pub classifier: SlotClassifier,
    pub rotation: RotationHead,
}

impl MuStack {
    pub fn register<R: Rng>(arch: &MuArchitecture, store: &mut ParamStore, rng: &mut R) -> Self {
        let backbone = arch.backbone.register(store, BACKBONE_PREFIX, rng);
        let bottleneck = Bottleneck::register(
            store,
            BOTTLENECK_PREFIX,
            backbone.feature_dim(),
            arch.embed_dim,
            rng,
        );
        let classifier = SlotClassifier::register(
            store,
            CLASSIFIER_PREFIX,
            arch.embed_dim,
            arch.slots,
            arch.classes,
            rng,
        );
        let rotation = RotationHead::register(store, ROTATION_PREFIX, arch.embed_dim, rng);
        MuStack {
            backbone,
            bottleneck,
            classifier,
            rotation,
        }
    }

    /// Bottleneck embedding `(N, embed)` for a `(N, C, F, T)` batch.
    pub fn embed<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TrainError> {
        let feats = self.backbone.forward(g, store, x, train, rng)?;
        Ok(self.bottleneck.forward(g, store, feats))
    }

    /// Per-slot probabilities `(M, K+1)` for each sample, eval mode.
    pub fn slot_probs(
        &self,
        store: &ParamStore,
        features: &[&Array3<f64>],
    ) -> Result<Vec<Array2<f64>>, TrainError> {
        let mut out = Vec::with_capacity(features.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in features.chunks(64) {
            let mut g = Graph::new();
            let x = g.leaf(batch_features(chunk)?);
            let z = self.embed(&mut g, store, x, false, &mut rng)?;
            let flat = self.classifier.forward(&mut g, store, z);
            let n = chunk.len();
            let shaped = g.reshape(flat, &[n, self.classifier.slots, self.classifier.classes]);
            let probs = g.softmax_last(shaped);
            let v = g.value(probs);
            for i in 0..n {
                let p = v
                    .index_axis(Axis(0), i)
                    .to_owned()
                    .into_dimensionality::<Ix2>()
                    .expect("slot probs rank");
                out.push(p);
            }
        }
        Ok(out)
    }
}

/// Single-user model shape: residual backbone, bottleneck width, K classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuArchitecture {
    pub resnet: ResNetSpec,
    pub embed_dim: usize,
    pub classes: usize,
}

impl SuArchitecture {
    /// Widar-scale model: ResNet-18, 512-d bottleneck, K=6.
    pub fn paper() -> Self {
        SuArchitecture {
            resnet: ResNetSpec::resnet18(),
            embed_dim: 512,
            classes: 6,
        }
    }

    pub fn desk(classes: usize) -> Self {
        SuArchitecture {
            resnet: ResNetSpec::desk(),
            embed_dim: 32,
            classes,
        }
    }
}

pub struct SuStack {
    pub backbone: SingleUserBackbone,
    pub bottleneck: Bottleneck,
    pub classifier: ActivityClassifier,
    pub rotation: RotationHead,
}

impl SuStack {
    pub fn register<R: Rng>(arch: &SuArchitecture, store: &mut ParamStore, rng: &mut R) -> Self {
        let backbone = arch.resnet.register(store, BACKBONE_PREFIX, rng);
        let bottleneck = Bottleneck::register(
            store,
            BOTTLENECK_PREFIX,
            backbone.feature_dim(),
            arch.embed_dim,
            rng,
        );
        let classifier =
            ActivityClassifier::register(store, CLASSIFIER_PREFIX, arch.embed_dim, arch.classes, rng);
        let rotation = RotationHead::register(store, ROTATION_PREFIX, arch.embed_dim, rng);
        SuStack {
            backbone,
            bottleneck,
            classifier,
            rotation,
        }
    }

    pub fn embed(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        train: bool,
    ) -> Result<Var, TrainError> {
        let feats = self.backbone.forward(g, store, x, train)?;
        Ok(self.bottleneck.forward(g, store, feats))
    }

    /// Embeddings `(n, embed)` and class probabilities `(n, K)`, eval mode.
    pub fn embed_probs(
        &self,
        store: &ParamStore,
        features: &[&Array3<f64>],
    ) -> Result<(Array2<f64>, Array2<f64>), TrainError> {
        let n = features.len();
        let mut z_all = Array2::zeros((n, self.bottleneck.embed_dim()));
        let mut p_all = Array2::zeros((n, self.classifier.classes));
        let mut row = 0;
        for chunk in features.chunks(64) {
            let mut g = Graph::new();
            let x = g.leaf(batch_features(chunk)?);
            let z = self.embed(&mut g, store, x, false)?;
            let logits = self.classifier.forward(&mut g, store, z);
            let probs = g.softmax_last(logits);
            let zv = g.value(z);
            let pv = g.value(probs);
            for i in 0..chunk.len() {
                for d in 0..z_all.ncols() {
                    z_all[[row, d]] = zv[[i, d]];
                }
                for k in 0..p_all.ncols() {
                    p_all[[row, k]] = pv[[i, k]];
                }
                row += 1;
            }
        }
        Ok((z_all, p_all))
    }
}

/// Freshly initialized multi-user model, drawn from the same stream
/// source training uses for this seed.
pub fn init_multiuser(arch: &MuArchitecture, seed: u64) -> (MuStack, ParamStore) {
    let mut streams = crate::loopcore::rng_streams(seed);
    let mut store = ParamStore::new();
    let stack = MuStack::register(arch, &mut store, &mut streams.init);
    (stack, store)
}

/// Freshly initialized single-user model for this seed.
pub fn init_singleuser(arch: &SuArchitecture, seed: u64) -> (SuStack, ParamStore) {
    let mut streams = crate::loopcore::rng_streams(seed);
    let mut store = ParamStore::new();
    let stack = SuStack::register(arch, &mut store, &mut streams.init);
    (stack, store)
}

fn check_store_names(scratch: &ParamStore, loaded: &ParamStore) -> Result<(), TrainError> {
    if scratch.len() != loaded.len() {
        return Err(TrainError::Checkpoint(format!(
            "slot count {} != expected {}",
            loaded.len(),
            scratch.len()
        )));
    }
    for (a, b) in scratch.ids().zip(loaded.ids()) {
        if scratch.name(a) != loaded.name(b) {
            return Err(TrainError::Checkpoint(format!(
                "slot name {:?} != expected {:?}",
                loaded.name(b),
                scratch.name(a)
            )));
        }
    }
    Ok(())
}

/// Load a multi-user checkpoint: architecture, stack handles bound to the
/// stored values, and the seed recorded at save time.
pub fn load_mu(path: &Path) -> Result<(MuArchitecture, MuStack, ParamStore, u64), TrainError> {
    let ckpt = load_checkpoint(path)?;
    let arch: MuArchitecture = serde_json::from_value(ckpt.arch.clone())
        .map_err(|e| TrainError::Checkpoint(format!("not a multi-user checkpoint: {e}")))?;
    let mut scratch = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = MuStack::register(&arch, &mut scratch, &mut rng);
    check_store_names(&scratch, &ckpt.store)?;
    Ok((arch, stack, ckpt.store, ckpt.seed))
}

pub fn load_su(path: &Path) -> Result<(SuArchitecture, SuStack, ParamStore, u64), TrainError> {
    let ckpt = load_checkpoint(path)?;
    let arch: SuArchitecture = serde_json::from_value(ckpt.arch.clone())
        .map_err(|e| TrainError::Checkpoint(format!("not a single-user checkpoint: {e}")))?;
    let mut scratch = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = SuStack::register(&arch, &mut scratch, &mut rng);
    check_store_names(&scratch, &ckpt.store)?;
    Ok((arch, stack, ckpt.store, ckpt.seed))
}

pub fn load_cpc(path: &Path) -> Result<(CpcSpec, ParamStore), TrainError> {
    let ckpt = load_checkpoint(path)?;
    let spec: CpcSpec = serde_json::from_value(ckpt.arch.clone())
        .map_err(|e| TrainError::Checkpoint(format!("not a cpc checkpoint: {e}")))?;
    let mut scratch = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let _ = spec.register(&mut scratch, CPC_PREFIX, &mut rng);
    check_store_names(&scratch, &ckpt.store)?;
    Ok((spec, ckpt.store))
}

/// Append a CPC stack to `store`, copying values from a pretrained CPC
/// checkpoint store. Used when the CPC auxiliary joins an adaptation run.
pub(crate) fn merge_cpc(
    spec: &CpcSpec,
    cpc_store: &ParamStore,
    store: &mut ParamStore,
) -> Result<CpcStack, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stack = spec.register(store, CPC_PREFIX, &mut rng);
    for id in cpc_store.ids() {
        let name = cpc_store.name(id).to_string();
        let target = store
            .id_of(&name)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing merged slot {name:?}")))?;
        store.set_value(target, cpc_store.value(id).clone());
    }
    Ok(stack)
}

/// Fill every slot of `dst` with the same-named value from `src`. Used to
/// split a merged model+CPC store back into loadable checkpoints.
pub(crate) fn copy_values_by_name(
    dst: &mut ParamStore,
    src: &ParamStore,
) -> Result<(), TrainError> {
    let ids: Vec<_> = dst.ids().collect();
    for id in ids {
        let name = dst.name(id).to_string();
        let s = src
            .id_of(&name)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing slot {name:?}")))?;
        dst.set_value(id, src.value(s).clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use net_arch::{param_hash, save_checkpoint};

    #[test]
    fn mu_roundtrip_preserves_every_slot() {
        let arch = MuArchitecture::desk(3, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _ = MuStack::register(&arch, &mut store, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &serde_json::to_value(&arch).unwrap(), 9, &store).unwrap();

        let (back_arch, _stack, loaded, seed) = load_mu(&path).unwrap();
        assert_eq!(back_arch, arch);
        assert_eq!(seed, 9);
        assert_eq!(param_hash(&loaded, ""), param_hash(&store, ""));
    }

    #[test]
    fn su_checkpoint_rejected_by_mu_loader() {
        let arch = SuArchitecture::desk(4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let _ = SuStack::register(&arch, &mut store, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        save_checkpoint(&path, &serde_json::to_value(&arch).unwrap(), 1, &store).unwrap();

        assert!(matches!(load_mu(&path), Err(TrainError::Checkpoint(_))));
        assert!(load_su(&path).is_ok());
    }

    #[test]
    fn merge_cpc_copies_pretrained_values() {
        let spec = CpcSpec::desk(4);
        let mut cpc_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _ = spec.register(&mut cpc_store, CPC_PREFIX, &mut rng);

        let arch = MuArchitecture::desk(2, 3);
        let mut store = ParamStore::new();
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let _ = MuStack::register(&arch, &mut store, &mut rng2);
        let before = store.len();
        let _ = merge_cpc(&spec, &cpc_store, &mut store).unwrap();
        assert_eq!(store.len(), before + cpc_store.len());
        assert_eq!(
            param_hash(&store, CPC_PREFIX),
            param_hash(&cpc_store, CPC_PREFIX)
        );
    }

    #[test]
    fn slot_probs_rows_sum_to_one() {
        let arch = MuArchitecture::desk(3, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = MuStack::register(&arch, &mut store, &mut rng);
        let grids: Vec<Array3<f64>> = (0..3)
            .map(|i| Array3::from_shape_fn((1, 16, 24), |(_, f, t)| ((f + t + i) as f64).sin()))
            .collect();
        let refs: Vec<&Array3<f64>> = grids.iter().collect();
        let probs = stack.slot_probs(&store, &refs).unwrap();
        assert_eq!(probs.len(), 3);
        for p in &probs {
            assert_eq!(p.dim(), (3, 4));
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
