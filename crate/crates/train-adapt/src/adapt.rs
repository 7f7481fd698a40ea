//! Source-free adaptation loops. Every entry point loads a checkpoint and
//! an unlabeled target view, freezes the classifier, and minimizes a
//! weighted sum of information-maximization and self-supervised terms.
//!
//! The IM term is `L_ent + L_gent`, where `L_gent` is the (negative)
//! marginal-entropy diversity term; minimizing the sum sharpens per-sample
//! predictions while spreading the batch marginal. The multi-user variant
//! weights the marginal by slot occupancy so empty slots cannot satisfy
//! the diversity pressure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adapt_losses::{
    conditional_entropy_loss, cpc_loss, occupancy_weighted_gent, pseudo_label_loss,
    pseudo_label_round, rotation_pair_loss, standard_gent,
};
use autodiff::{Graph, ParamStore, Var};
use eval_metrics::{metric_report, single_user_metrics};
use ndarray::{Array2, Axis};
use net_arch::{batch_features, param_hash, save_checkpoint, CpcStack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::loopcore::{
    ensure_finite, ensure_finite_logits, epoch_batches, flush_buffers, rng_streams, Opt,
};
use crate::model::{copy_values_by_name, merge_cpc, CPC_PREFIX};
use crate::{
    load_cpc, load_mu, load_su, EpochRecord, MuArchitecture, MuStack, ProbeSet, RunDir, SuStack,
    TrainConfig, TrainError, UnlabeledTargetSet, CLASSIFIER_PREFIX,
};

/// Outcome of one adaptation run. The classifier hashes are equal by
/// construction; the loop errors out instead of reporting a drifted pair.
#[derive(Debug, Serialize)]
pub struct AdaptationReport {
    pub method: String,
    pub epochs: Vec<EpochRecord>,
    pub final_checkpoint: PathBuf,
    pub classifier_hash_pre: String,
    pub classifier_hash_post: String,
    /// Target samples too short for the CPC horizon (0 without CPC).
    pub skipped_short: usize,
}

/// CPC auxiliary riding along an adaptation run: the stack is merged into
/// the model store so one optimizer updates both.
struct CpcAux {
    stack: CpcStack,
    grids: Vec<Array2<f64>>,
    valid: Vec<bool>,
    skipped: usize,
}

impl CpcAux {
    fn load(
        path: &Path,
        target: &UnlabeledTargetSet,
        store: &mut ParamStore,
    ) -> Result<Self, TrainError> {
        let (spec, cpc_store) = load_cpc(path)?;
        let stack = merge_cpc(&spec, &cpc_store, store)?;
        let mut grids = Vec::with_capacity(target.len());
        let mut valid = Vec::with_capacity(target.len());
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
            let ok = spec.anchor_range(grid.ncols()).is_ok();
            valid.push(ok);
            if !ok {
                skipped += 1;
            }
            grids.push(grid);
        }
        Ok(CpcAux {
            stack,
            grids,
            valid,
            skipped,
        })
    }

    /// Contrastive loss over the batch members long enough to encode;
    /// `None` when none are.
    fn batch_loss<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[usize],
        rng: &mut R,
    ) -> Result<Option<(Var, usize)>, TrainError> {
        let spec = self.stack.spec();
        let mut futures: Vec<Vec<Var>> = vec![Vec::new(); spec.k_p];
        let mut preds: Vec<Vec<Var>> = vec![Vec::new(); spec.k_p];
        let mut count = 0;
        for &i in batch {
            if !self.valid[i] {
                continue;
            }
            let grid = &self.grids[i];
            let (lo, hi) = spec.anchor_range(grid.ncols())?;
            let anchor = rng.gen_range(lo..=hi);
            let enc = self.stack.encode(g, store, grid, anchor, Some(&mut *rng))?;
            for k in 0..spec.k_p {
                futures[k].push(enc.future[k]);
                preds[k].push(enc.predicted[k]);
            }
            count += 1;
        }
        if count == 0 {
            return Ok(None);
        }
        let true_z: Vec<Var> = futures.iter().map(|f| g.concat(f, 0)).collect();
        let pred_z: Vec<Var> = preds.iter().map(|p| g.concat(p, 0)).collect();
        let loss = cpc_loss(g, &true_z, &pred_z, spec.temperature, true);
        Ok(Some((loss, count)))
    }
}

/// Per-epoch term accumulator weighted by how many samples each batch
/// contributed to a term.
#[derive(Default)]
struct TermSums {
    sums: BTreeMap<&'static str, (f64, f64)>,
}

impl TermSums {
    fn add(&mut self, name: &'static str, value: f64, weight: usize) {
        let e = self.sums.entry(name).or_insert((0.0, 0.0));
        e.0 += value * weight as f64;
        e.1 += weight as f64;
    }

    fn into_terms(self) -> BTreeMap<String, f64> {
        self.sums
            .into_iter()
            .map(|(k, (s, w))| (k.to_string(), if w > 0.0 { s / w } else { 0.0 }))
            .collect()
    }
}

fn mu_probe(
    stack: &MuStack,
    store: &ParamStore,
    probe: &ProbeSet,
) -> Result<serde_json::Value, TrainError> {
    let refs: Vec<_> = probe.features.iter().collect();
    let preds = stack.slot_probs(store, &refs)?;
    let report = metric_report(&preds, &probe.labels)?;
    Ok(serde_json::to_value(report)?)
}

fn su_probe(
    stack: &SuStack,
    store: &ParamStore,
    probe: &ProbeSet,
) -> Result<serde_json::Value, TrainError> {
    let refs: Vec<_> = probe.features.iter().collect();
    let (_z, probs) = stack.embed_probs(store, &refs)?;
    let preds: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let truths: Vec<usize> = probe
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if l.occupancy() != 1 {
                return Err(TrainError::Input(format!(
                    "probe sample {i}: single-user probe needs occupancy 1"
                )));
            }
            Ok(l.activities()[0])
        })
        .collect::<Result<_, _>>()?;
    let report = single_user_metrics(&preds, &truths, stack.classifier.classes)?;
    Ok(serde_json::to_value(report)?)
}

fn finish_mu(
    arch: &MuArchitecture,
    store: &ParamStore,
    cpc: Option<&CpcAux>,
    cfg: &TrainConfig,
    run: &RunDir,
    hash_pre: String,
    epochs: Vec<EpochRecord>,
    method: &str,
) -> Result<AdaptationReport, TrainError> {
    let hash_post = param_hash(store, CLASSIFIER_PREFIX);
    if hash_post != hash_pre {
        return Err(TrainError::Frozen(
            "classifier hash changed during adaptation".into(),
        ));
    }
    let out = run.path("adapted.ckpt");
    if let Some(aux) = cpc {
        // Split the merged store back into two loadable checkpoints.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mu_store = ParamStore::new();
        let _ = MuStack::register(arch, &mut mu_store, &mut rng);
        copy_values_by_name(&mut mu_store, store)?;
        save_checkpoint(&out, &serde_json::to_value(arch)?, cfg.seed, &mu_store)?;

        let spec = aux.stack.spec();
        let mut cpc_store = ParamStore::new();
        let _ = spec.register(&mut cpc_store, CPC_PREFIX, &mut rng);
        copy_values_by_name(&mut cpc_store, store)?;
        save_checkpoint(
            &run.path("cpc_adapted.ckpt"),
            &serde_json::to_value(spec)?,
            cfg.seed,
            &cpc_store,
        )?;
    } else {
        save_checkpoint(&out, &serde_json::to_value(arch)?, cfg.seed, store)?;
    }
    let report = AdaptationReport {
        method: method.to_string(),
        epochs,
        final_checkpoint: out,
        classifier_hash_pre: hash_pre,
        classifier_hash_post: hash_post,
        skipped_short: cpc.map_or(0, |a| a.skipped),
    };
    run.write_report(&report)?;
    Ok(report)
}

fn mu_adapt_impl(
    target: &UnlabeledTargetSet,
    checkpoint: &Path,
    cpc_checkpoint: Option<&Path>,
    cfg: &TrainConfig,
    probe: Option<&ProbeSet>,
    run: &RunDir,
    method: &str,
) -> Result<AdaptationReport, TrainError> {
    cfg.validate()?;
    let (arch, stack, mut store, _seed) = load_mu(checkpoint)?;
    target.check_uniform(arch.backbone.in_channels)?;
    run.write_config(&serde_json::json!({ "config": cfg, "arch": arch, "method": method }))?;

    let cpc = match cpc_checkpoint {
        Some(p) if cfg.lambda_cpc > 0.0 => Some(CpcAux::load(p, target, &mut store)?),
        _ => None,
    };
    let hash_pre = param_hash(&store, CLASSIFIER_PREFIX);
    store.freeze_prefix(CLASSIFIER_PREFIX);

    let mut streams = rng_streams(cfg.seed);
    let mut opt = Opt::from_config(cfg);
    let n = target.len();
    let (m, c) = (stack.classifier.slots, stack.classifier.classes);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, &mut streams.shuffle);
        let mut sums = TermSums::default();
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| target.feature(i)).collect();
            let mut g = Graph::new();
            let x = g.leaf(batch_features(&refs)?);
            let z = stack.embed(&mut g, &store, x, true, &mut streams.dropout)?;
            let flat = stack.classifier.forward(&mut g, &store, z);
            ensure_finite_logits(&g, flat, epoch, bi)?;
            let shaped = g.reshape(flat, &[batch.len(), m, c]);
            let probs = g.softmax_last(shaped);
            let ent = conditional_entropy_loss(&mut g, probs);
            let gent = if cfg.occupancy_gent {
                occupancy_weighted_gent(&mut g, probs)
            } else {
                standard_gent(&mut g, probs)
            };
            let im = g.add(ent, gent);
            let mut total = g.mul_scalar(im, cfg.lambda_ent);
            sums.add("ent", g.scalar(ent), batch.len());
            sums.add("gent", g.scalar(gent), batch.len());
            sums.add("im", g.scalar(im), batch.len());

            if cfg.lambda_rot > 0.0 {
                let xr = g.flip_last2(x);
                let zr = stack.embed(&mut g, &store, xr, true, &mut streams.dropout)?;
                let rot = rotation_pair_loss(&mut g, &store, &stack.rotation, z, zr);
                let w = g.mul_scalar(rot, cfg.lambda_rot);
                total = g.add(total, w);
                sums.add("rot", g.scalar(rot), batch.len());
            }
            if let Some(aux) = &cpc {
                if let Some((cl, covered)) = aux.batch_loss(&mut g, &store, batch, &mut streams.aug)? {
                    let w = g.mul_scalar(cl, cfg.lambda_cpc);
                    total = g.add(total, w);
                    sums.add("cpc", g.scalar(cl), covered);
                }
            }

            let val = g.scalar(total);
            ensure_finite(val, epoch, bi)?;
            sums.add("total", val, batch.len());
            store.zero_grads();
            let grads = g.backward(total);
            g.apply_param_grads(&grads, &mut store);
            opt.step(&mut store);
            flush_buffers(&mut g, &mut store);
        }
        let mut rec = EpochRecord::new(epoch);
        rec.terms = sums.into_terms();
        if let Some(p) = probe {
            rec.probe = Some(mu_probe(&stack, &store, p)?);
        }
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    finish_mu(&arch, &store, cpc.as_ref(), cfg, run, hash_pre, epochs, method)
}

/// Multi-user source-free adaptation: occupancy-weighted IM plus the
/// rotation auxiliary. `lambda_rot = 0` degenerates to the IM-only
/// baseline from the same entry point.
pub fn adapt_multiuser(
    target: &UnlabeledTargetSet,
    checkpoint: &Path,
    cfg: &TrainConfig,
    probe: Option<&ProbeSet>,
    run: &RunDir,
) -> Result<AdaptationReport, TrainError> {
    mu_adapt_impl(target, checkpoint, None, cfg, probe, run, "adapt_multiuser")
}

/// Ablation entry point: [`adapt_multiuser`] plus a CPC term from a
/// pretrained CPC checkpoint. Emits ent/rot/cpc loss curves.
pub fn adapt_multiuser_with_cpc(
    target: &UnlabeledTargetSet,
    checkpoint: &Path,
    cpc_checkpoint: &Path,
    cfg: &TrainConfig,
    probe: Option<&ProbeSet>,
    run: &RunDir,
) -> Result<AdaptationReport, TrainError> {
    mu_adapt_impl(
        target,
        checkpoint,
        Some(cpc_checkpoint),
        cfg,
        probe,
        run,
        "adapt_multiuser_with_cpc",
    )
}

/// Single-user source-free adaptation: centroid pseudo-labels once per
/// epoch, IM, rotation, and an optional CPC term when a CPC checkpoint is
/// given and `lambda_cpc > 0`. `lambda_cpc = 0` is the pseudo-label +
/// IM + rotation configuration.
pub fn adapt_singleuser(
    target: &UnlabeledTargetSet,
    checkpoint: &Path,
    cpc_checkpoint: Option<&Path>,
    cfg: &TrainConfig,
    probe: Option<&ProbeSet>,
    run: &RunDir,
) -> Result<AdaptationReport, TrainError> {
    cfg.validate()?;
    let (arch, stack, mut store, _seed) = load_su(checkpoint)?;
    target.check_uniform(arch.resnet.in_channels)?;
    run.write_config(
        &serde_json::json!({ "config": cfg, "arch": arch, "method": "adapt_singleuser" }),
    )?;

    let cpc = match cpc_checkpoint {
        Some(p) if cfg.lambda_cpc > 0.0 => Some(CpcAux::load(p, target, &mut store)?),
        _ => None,
    };
    let hash_pre = param_hash(&store, CLASSIFIER_PREFIX);
    store.freeze_prefix(CLASSIFIER_PREFIX);

    let mut streams = rng_streams(cfg.seed);
    let mut opt = Opt::from_config(cfg);
    let n = target.len();
    let all_refs: Vec<_> = target.features().iter().collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Centroid labels over the full target set, fixed for the epoch.
        let (z_all, p_all) = stack.embed_probs(&store, &all_refs)?;
        let (plabels, _centroids) = pseudo_label_round(&z_all, &p_all)?;

        let batches = epoch_batches(n, cfg.batch_size, &mut streams.shuffle);
        let mut sums = TermSums::default();
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| target.feature(i)).collect();
            let yb: Vec<usize> = batch.iter().map(|&i| plabels[i]).collect();
            let mut g = Graph::new();
            let x = g.leaf(batch_features(&refs)?);
            let z = stack.embed(&mut g, &store, x, true)?;
            let logits = stack.classifier.forward(&mut g, &store, z);
            ensure_finite_logits(&g, logits, epoch, bi)?;
            let pl = pseudo_label_loss(&mut g, logits, &yb);
            let probs = g.softmax_last(logits);
            let ent = conditional_entropy_loss(&mut g, probs);
            let gent = standard_gent(&mut g, probs);
            let im = g.add(ent, gent);
            let pl_w = g.mul_scalar(pl, cfg.lambda_cls);
            let im_w = g.mul_scalar(im, cfg.lambda_ent);
            let mut total = g.add(pl_w, im_w);
            sums.add("pl", g.scalar(pl), batch.len());
            sums.add("ent", g.scalar(ent), batch.len());
            sums.add("gent", g.scalar(gent), batch.len());
            sums.add("im", g.scalar(im), batch.len());

            if cfg.lambda_rot > 0.0 {
                let xr = g.flip_last2(x);
                let zr = stack.embed(&mut g, &store, xr, true)?;
                let rot = rotation_pair_loss(&mut g, &store, &stack.rotation, z, zr);
                let w = g.mul_scalar(rot, cfg.lambda_rot);
                total = g.add(total, w);
                sums.add("rot", g.scalar(rot), batch.len());
            }
            if let Some(aux) = &cpc {
                if let Some((cl, covered)) = aux.batch_loss(&mut g, &store, batch, &mut streams.aug)? {
                    let w = g.mul_scalar(cl, cfg.lambda_cpc);
                    total = g.add(total, w);
                    sums.add("cpc", g.scalar(cl), covered);
                }
            }

            let val = g.scalar(total);
            ensure_finite(val, epoch, bi)?;
            sums.add("total", val, batch.len());
            store.zero_grads();
            let grads = g.backward(total);
            g.apply_param_grads(&grads, &mut store);
            opt.step(&mut store);
            flush_buffers(&mut g, &mut store);
        }
        let mut rec = EpochRecord::new(epoch);
        rec.terms = sums.into_terms();
        if let Some(p) = probe {
            rec.probe = Some(su_probe(&stack, &store, p)?);
        }
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    let hash_post = param_hash(&store, CLASSIFIER_PREFIX);
    if hash_post != hash_pre {
        return Err(TrainError::Frozen(
            "classifier hash changed during adaptation".into(),
        ));
    }
    let out = run.path("adapted.ckpt");
    if let Some(aux) = &cpc {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut su_store = ParamStore::new();
        let _ = SuStack::register(&arch, &mut su_store, &mut rng);
        copy_values_by_name(&mut su_store, &store)?;
        save_checkpoint(&out, &serde_json::to_value(&arch)?, cfg.seed, &su_store)?;

        let spec = aux.stack.spec();
        let mut cpc_store = ParamStore::new();
        let _ = spec.register(&mut cpc_store, CPC_PREFIX, &mut rng);
        copy_values_by_name(&mut cpc_store, &store)?;
        save_checkpoint(
            &run.path("cpc_adapted.ckpt"),
            &serde_json::to_value(spec)?,
            cfg.seed,
            &cpc_store,
        )?;
    } else {
        save_checkpoint(&out, &serde_json::to_value(&arch)?, cfg.seed, &store)?;
    }
    let report = AdaptationReport {
        method: "adapt_singleuser".to_string(),
        epochs,
        final_checkpoint: out,
        classifier_hash_pre: hash_pre,
        classifier_hash_post: hash_post,
        skipped_short: cpc.as_ref().map_or(0, |a| a.skipped),
    };
    run.write_report(&report)?;
    Ok(report)
}
