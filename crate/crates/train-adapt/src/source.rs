//! Supervised source training for both model families.

use std::path::PathBuf;

use autodiff::Graph;
use csi_core::Sample;
use net_arch::{batch_features, save_checkpoint};
use serde::Serialize;
use set_match::matched_cross_entropy;

use crate::loopcore::{
    ensure_finite, ensure_finite_logits, epoch_batches, flush_buffers, mean_vars, rng_streams, Opt,
};
use crate::{EpochRecord, MuArchitecture, RunDir, SuArchitecture, TrainConfig, TrainError};

/// What source training leaves behind.
#[derive(Debug, Serialize)]
pub struct SourceArtifacts {
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub final_loss: Option<f64>,
}

fn check_mu_samples(samples: &[Sample], arch: &MuArchitecture) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Input("no source samples".into()));
    }
    let k = arch.classes - 1;
    for (i, s) in samples.iter().enumerate() {
        if s.features.dim().0 != arch.backbone.in_channels {
            return Err(TrainError::Input(format!(
                "sample {i}: {} channels, model expects {}",
                s.features.dim().0,
                arch.backbone.in_channels
            )));
        }
        if s.labels.m() != arch.slots {
            return Err(TrainError::Input(format!(
                "sample {i}: {} label slots, model has {}",
                s.labels.m(),
                arch.slots
            )));
        }
        s.labels
            .to_class_indices(k)
            .map_err(|e| TrainError::Input(format!("sample {i}: {e}")))?;
    }
    Ok(())
}

/// Train the multi-user slot model on labeled source data with
/// Hungarian-matched cross entropy. Saves `source.ckpt` in the run dir.
pub fn train_source_multiuser(
    samples: &[Sample],
    arch: &MuArchitecture,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<SourceArtifacts, TrainError> {
    cfg.validate()?;
    check_mu_samples(samples, arch)?;
    run.write_config(&serde_json::json!({ "config": cfg, "arch": arch }))?;

    let mut streams = rng_streams(cfg.seed);
    let (stack, mut store) = crate::model::init_multiuser(arch, cfg.seed);
    let mut opt = Opt::from_config(cfg);

    let n = samples.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, &mut streams.shuffle);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| &samples[i].features).collect();
            let mut g = Graph::new();
            let x = g.leaf(batch_features(&refs)?);
            let z = stack.embed(&mut g, &store, x, true, &mut streams.dropout)?;
            let flat = stack.classifier.forward(&mut g, &store, z);
            ensure_finite_logits(&g, flat, epoch, bi)?;
            let mut terms = Vec::with_capacity(batch.len());
            for (row, &si) in batch.iter().enumerate() {
                let logits = stack.classifier.sample_logits(&mut g, flat, row)?;
                let (l, _) =
                    matched_cross_entropy(&mut g, logits, &samples[si].labels, cfg.label_smoothing)?;
                terms.push(l);
            }
            let loss = mean_vars(&mut g, &terms);
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
        rec.terms.insert("loss".into(), loss_sum / n as f64);
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    let checkpoint = run.path("source.ckpt");
    save_checkpoint(
        &checkpoint,
        &serde_json::to_value(arch)?,
        cfg.seed,
        &store,
    )?;
    let artifacts = SourceArtifacts {
        checkpoint,
        final_loss: epochs.last().and_then(|r| r.term("loss")),
        epochs,
    };
    run.write_report(&artifacts)?;
    Ok(artifacts)
}

fn su_label(s: &Sample, classes: usize, i: usize) -> Result<usize, TrainError> {
    if s.labels.occupancy() != 1 {
        return Err(TrainError::Input(format!(
            "sample {i}: single-user training needs occupancy 1, got {}",
            s.labels.occupancy()
        )));
    }
    let act = s.labels.activities()[0];
    if act >= classes {
        return Err(TrainError::Input(format!(
            "sample {i}: activity {act} out of range for {classes} classes"
        )));
    }
    Ok(act)
}

/// Train the single-user model with label-smoothed cross entropy. Saves
/// `source.ckpt` in the run dir.
pub fn train_source_singleuser(
    samples: &[Sample],
    arch: &SuArchitecture,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<SourceArtifacts, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Input("no source samples".into()));
    }
    let labels: Vec<usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| su_label(s, arch.classes, i))
        .collect::<Result<_, _>>()?;
    run.write_config(&serde_json::json!({ "config": cfg, "arch": arch }))?;

    let mut streams = rng_streams(cfg.seed);
    let (stack, mut store) = crate::model::init_singleuser(arch, cfg.seed);
    let mut opt = Opt::from_config(cfg);

    let n = samples.len();
    let s = cfg.label_smoothing;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(n, cfg.batch_size, &mut streams.shuffle);
        let mut loss_sum = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<_> = batch.iter().map(|&i| &samples[i].features).collect();
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let x = g.leaf(batch_features(&refs)?);
            let z = stack.embed(&mut g, &store, x, true)?;
            let logits = stack.classifier.forward(&mut g, &store, z);
            let lp = g.log_softmax_last(logits);
            // Smoothed CE: -( (1-s)*mean log p_y + s*mean over all classes ).
            let picked = g.gather_class(lp, &yb);
            let hit = g.mean_all(picked);
            let spread = g.mean_all(lp);
            let a = g.mul_scalar(hit, 1.0 - s);
            let b = g.mul_scalar(spread, s);
            let sum = g.add(a, b);
            let loss = g.mul_scalar(sum, -1.0);
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
        rec.terms.insert("loss".into(), loss_sum / n as f64);
        run.append_epoch(&rec)?;
        epochs.push(rec);
    }

    let checkpoint = run.path("source.ckpt");
    save_checkpoint(
        &checkpoint,
        &serde_json::to_value(arch)?,
        cfg.seed,
        &store,
    )?;
    let artifacts = SourceArtifacts {
        checkpoint,
        final_loss: epochs.last().and_then(|r| r.term("loss")),
        epochs,
    };
    run.write_report(&artifacts)?;
    Ok(artifacts)
}
