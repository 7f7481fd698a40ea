//! Self-supervised pre-training stages: the rotation head on top of a
//! frozen source model, and the CPC stack on raw target features.

use std::path::{Path, PathBuf};

use adapt_losses::{cpc_loss, rotation_pair_loss};
use autodiff::{Graph, SlotKind, Var};
use ndarray::Axis;
use net_arch::{batch_features, param_hash, save_checkpoint, CpcSpec};
use rand::Rng;
use serde::Serialize;

use crate::loopcore::{ensure_finite, epoch_batches, flush_buffers, rng_streams, Opt};
use crate::model::CPC_PREFIX;
use crate::{load_mu, EpochRecord, RunDir, TrainConfig, TrainError, UnlabeledTargetSet};

#[derive(Debug, Serialize)]
pub struct RotationArtifacts {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub frozen_hash_pre: String,
    pub frozen_hash_post: String,
}

/// Everything except the given trainable prefix is frozen for the
/// optimizer; buffers are untouched (they only move in train-mode
/// forwards, which the caller avoids).
fn train_only_prefix(store: &mut autodiff::ParamStore, prefix: &str) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.kind(id) == SlotKind::Param {
            let keep = store.name(id).starts_with(prefix);
            store.set_trainable(id, keep);
        }
    }
}

/// Hash of every slot the stage must not move: backbone, bottleneck, and
/// classifier, including running statistics.
fn frozen_hash(store: &autodiff::ParamStore) -> String {
    format!(
        "{}/{}/{}",
        param_hash(store, "backbone"),
        param_hash(store, "bottleneck"),
        param_hash(store, "classifier")
    )
}

/// Train the rotation head on unlabeled target data with the rest of the
/// source model frozen (eval-mode forwards, so running statistics hold
/// still too). Saves `rotation.ckpt` — the full model with the trained
/// head — in the run dir.
pub fn pretrain_rotation(
    target: &UnlabeledTargetSet,
    checkpoint: &Path,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<RotationArtifacts, TrainError> {
    cfg.validate()?;
    let (arch, stack, mut store, _seed) = load_mu(checkpoint)?;
    target.check_uniform(arch.backbone.in_channels)?;
    run.write_config(&serde_json::json!({ "config": cfg, "arch": arch }))?;

    // The stage trains the head from scratch: reset it to the uniform
    // state (zero map -> ln 2 loss on any pair).
    for id in [stack.rotation.lin.w, stack.rotation.lin.b] {
        let zero = autodiff::Tensor::zeros(store.value(id).raw_dim());
        store.set_value(id, zero);
    }
    let pre = frozen_hash(&store);
    train_only_prefix(&mut store, "rotation");
    let mut streams = rng_streams(cfg.seed);
    let mut opt = Opt::from_config(cfg);

    let n = target.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, &mut streams.shuffle);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| target.feature(i)).collect();
            let mut g = Graph::new();
            let x = g.leaf(batch_features(&refs)?);
            let z = stack.embed(&mut g, &store, x, false, &mut streams.dropout)?;
            let xr = g.flip_last2(x);
            let zr = stack.embed(&mut g, &store, xr, false, &mut streams.dropout)?;
            let loss = rotation_pair_loss(&mut g, &store, &stack.rotation, z, zr);
            let val = g.scalar(loss);
            ensure_finite(val, epoch, bi)?;
            store.zero_grads();
            let grads = g.backward(loss);
            g.apply_param_grads(&grads, &mut store);
            opt.step(&mut store);
            loss_sum += val * batch.len() as f64;
        }
        let mut rec = EpochRecord::new(epoch);
        rec.terms.insert("rot".into(), loss_sum / n as f64);
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    let post = frozen_hash(&store);
    if post != pre {
        return Err(TrainError::Frozen(
            "backbone/bottleneck/classifier moved during rotation pre-training".into(),
        ));
    }
    let out = run.path("rotation.ckpt");
    save_checkpoint(&out, &serde_json::to_value(&arch)?, cfg.seed, &store)?;
    let artifacts = RotationArtifacts {
        checkpoint: out,
        epochs,
        frozen_hash_pre: pre,
        frozen_hash_post: post,
    };
    run.write_report(&artifacts)?;
    Ok(artifacts)
}

#[derive(Debug, Serialize)]
pub struct CpcArtifacts {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochRecord>,
    /// Samples whose time axis yields fewer windows than the context
    /// minimum plus the prediction horizon; excluded from training.
    pub skipped_short: usize,
}

/// Train a fresh CPC stack on raw target feature grids. Saves `cpc.ckpt`
/// in the run dir. Single-channel grids only; short samples are counted
/// and skipped.
pub fn pretrain_cpc(
    target: &UnlabeledTargetSet,
    spec: &CpcSpec,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<CpcArtifacts, TrainError> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(TrainError::Input("empty target set".into()));
    }
    run.write_config(&serde_json::json!({ "config": cfg, "spec": spec }))?;

    let mut grids = Vec::with_capacity(target.len());
    let mut valid = Vec::new();
    let mut skipped = 0;
    for i in 0..target.len() {
        let f = target.feature(i);
        let (c, rows, _t) = f.dim();
        if c != 1 {
            return Err(TrainError::Input(format!(
                "sample {i}: cpc expects single-channel grids, got {c} channels"
            )));
        }
        if rows != spec.in_features {
            return Err(TrainError::Input(format!(
                "sample {i}: {rows} feature rows, cpc encoder expects {}",
                spec.in_features
            )));
        }
        let grid = f.index_axis(Axis(0), 0).to_owned();
        if spec.anchor_range(grid.ncols()).is_ok() {
            valid.push(i);
        } else {
            skipped += 1;
        }
        grids.push(grid);
    }
    if valid.is_empty() {
        return Err(TrainError::Input(format!(
            "all {skipped} samples too short for w_min {} + horizon {}",
            spec.w_min, spec.k_p
        )));
    }

    let mut streams = rng_streams(cfg.seed);
    let mut store = autodiff::ParamStore::new();
    let stack = spec.register(&mut store, CPC_PREFIX, &mut streams.init);
    let mut opt = Opt::from_config(cfg);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(valid.len(), cfg.batch_size, &mut streams.shuffle);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let mut g = Graph::new();
            let mut futures: Vec<Vec<Var>> = vec![Vec::new(); spec.k_p];
            let mut preds: Vec<Vec<Var>> = vec![Vec::new(); spec.k_p];
            for &vi in batch {
                let grid = &grids[valid[vi]];
                let (lo, hi) = spec.anchor_range(grid.ncols())?;
                let anchor = streams.aug.gen_range(lo..=hi);
                let enc = stack.encode(&mut g, &store, grid, anchor, Some(&mut streams.aug))?;
                for k in 0..spec.k_p {
                    futures[k].push(enc.future[k]);
                    preds[k].push(enc.predicted[k]);
                }
            }
            let true_z: Vec<Var> = futures.iter().map(|f| g.concat(f, 0)).collect();
            let pred_z: Vec<Var> = preds.iter().map(|p| g.concat(p, 0)).collect();
            let loss = cpc_loss(&mut g, &true_z, &pred_z, spec.temperature, true);
            let val = g.scalar(loss);
            ensure_finite(val, epoch, bi)?;
            store.zero_grads();
            let grads = g.backward(loss);
            g.apply_param_grads(&grads, &mut store);
            opt.step(&mut store);
            flush_buffers(&mut g, &mut store);
            loss_sum += val * batch.len() as f64;
        }
        let mut rec = EpochRecord::new(epoch);
        rec.terms.insert("cpc".into(), loss_sum / valid.len() as f64);
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    let out = run.path("cpc.ckpt");
    save_checkpoint(&out, &serde_json::to_value(spec)?, cfg.seed, &store)?;
    let artifacts = CpcArtifacts {
        checkpoint: out,
        epochs,
        skipped_short: skipped,
    };
    run.write_report(&artifacts)?;
    Ok(artifacts)
}
