//! Seed-sweep orchestration: source training (cached), pretext stages,
//! per-method adaptation, evaluation, and metric persistence.

use std::path::{Path, PathBuf};

use csi_core::{PaddedLabelVector, Sample};
use eval_metrics::{metric_report, single_user_metrics};
use net_arch::CpcSpec;
use serde::{Deserialize, Serialize};
use train_adapt::{
    adapt_multiuser, adapt_multiuser_with_cpc, adapt_singleuser, load_mu, load_su,
    pretrain_cpc, pretrain_rotation, train_source_multiuser, train_source_singleuser,
    MuArchitecture, RunDir, SuArchitecture, TrainConfig, UnlabeledTargetSet,
};

use crate::aggregate::{CellReport, ReportKind};
use crate::spec::{ExperimentSpec, Method, Mode};
use crate::CliError;

/// One completed (scenario, method, seed) cell.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub dir: PathBuf,
}

/// A seed whose pipeline aborted; the remaining methods of that seed are
/// skipped and the diagnostic is persisted under `runs/<scenario>/failures`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub stage: String,
    pub error: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub cells: Vec<CellSummary>,
    pub failures: Vec<SeedFailure>,
}

/// `true` when the environment forces deterministic kernels regardless of
/// spec overrides.
pub fn deterministic_env() -> bool {
    std::env::var("SHOTFI_DETERMINISTIC").map(|v| v == "1") == Ok(true)
}

fn finalize(cfg: &mut TrainConfig, force_deterministic: bool) {
    if force_deterministic {
        cfg.deterministic = true;
    }
}

/// Execute the full experiment under `out`. Stage errors abort only the
/// seed they occur in; the outcome lists every recorded failure.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<RunOutcome, CliError> {
    spec.validate()?;
    let (bench, mode) = spec.dataset.resolve(&spec.scenario)?;
    let scenario = spec.scenario.name();
    let force_det = deterministic_env();

    let data_dir = out.join("data").join(&scenario);
    let (source_samples, target_samples) = crate::dataset::ensure_dataset(&bench, &data_dir)?;

    // Adaptation sees only the label-free view; the sealed labels are
    // opened once, for evaluation.
    let (target, sealed) = UnlabeledTargetSet::from_samples(target_samples);
    let target_labels = sealed.open();

    let cells = spec.cells(mode);
    let mut outcome = RunOutcome {
        cells: Vec::new(),
        failures: Vec::new(),
    };
    for &seed in &spec.seeds {
        let ctx = SeedContext {
            spec,
            bench_k: bench.k,
            mode,
            scenario: &scenario,
            out,
            seed,
            source_samples: &source_samples,
            target: &target,
            target_labels: &target_labels,
            force_det,
        };
        match run_seed(&ctx, &cells) {
            Ok(mut done) => outcome.cells.append(&mut done),
            Err((stage, err)) => {
                let failure = SeedFailure {
                    seed,
                    stage,
                    error: err.to_string(),
                };
                let dir = out.join("runs").join(&scenario).join("failures");
                std::fs::create_dir_all(&dir)?;
                std::fs::write(
                    dir.join(format!("seed{seed}.json")),
                    serde_json::to_string_pretty(&failure)?,
                )?;
                outcome.failures.push(failure);
            }
        }
    }
    Ok(outcome)
}

struct SeedContext<'a> {
    spec: &'a ExperimentSpec,
    bench_k: usize,
    mode: Mode,
    scenario: &'a str,
    out: &'a Path,
    seed: u64,
    source_samples: &'a [Sample],
    target: &'a UnlabeledTargetSet,
    target_labels: &'a [PaddedLabelVector],
    force_det: bool,
}

type StageResult<T> = Result<T, (String, CliError)>;

fn stage<T, E: Into<CliError>>(name: &str, r: Result<T, E>) -> StageResult<T> {
    r.map_err(|e| (name.to_string(), e.into()))
}

fn run_seed(
    ctx: &SeedContext,
    cells: &[(Method, String, Option<f64>)],
) -> StageResult<Vec<CellSummary>> {
    let seed_dir = ctx
        .out
        .join("source")
        .join(ctx.scenario)
        .join(format!("seed{}", ctx.seed));
    let source_ckpt = stage("source", ensure_source(ctx, &seed_dir))?;

    let rotation_ckpt = if cells
        .iter()
        .any(|(m, _, _)| m.needs_rotation_pretrain(ctx.mode))
    {
        Some(stage(
            "rotation",
            ensure_rotation(ctx, &seed_dir, &source_ckpt),
        )?)
    } else {
        None
    };

    let cpc_ckpt = if cells.iter().any(|(m, _, _)| m.needs_cpc_pretrain()) {
        Some(stage("cpc", ensure_cpc(ctx, &seed_dir))?)
    } else {
        None
    };

    let mut done = Vec::with_capacity(cells.len());
    for (method, cell_name, rot_weight) in cells {
        let cell_dir = ctx
            .out
            .join("runs")
            .join(ctx.scenario)
            .join(cell_name)
            .join(format!("seed{}", ctx.seed));
        let run = stage(cell_name, RunDir::create(&cell_dir).map_err(CliError::from))?;
        let final_ckpt = stage(
            cell_name,
            run_cell(
                ctx,
                *method,
                *rot_weight,
                &source_ckpt,
                rotation_ckpt.as_deref(),
                cpc_ckpt.as_deref(),
                &run,
            ),
        )?;
        stage(
            cell_name,
            evaluate(ctx, cell_name, &final_ckpt, run.path("metrics.json")),
        )?;
        done.push(CellSummary {
            scenario: ctx.scenario.to_string(),
            method: cell_name.clone(),
            seed: ctx.seed,
            dir: cell_dir,
        });
    }
    Ok(done)
}

fn ensure_source(ctx: &SeedContext, seed_dir: &Path) -> Result<PathBuf, CliError> {
    let ckpt = seed_dir.join("source.ckpt");
    if ckpt.exists() {
        return Ok(ckpt);
    }
    let run = RunDir::create(seed_dir)?;
    match ctx.mode {
        Mode::MultiUser => {
            let m = ctx.source_samples[0].labels.m();
            let arch = MuArchitecture::desk(m, ctx.bench_k);
            let mut cfg = TrainConfig::source_multiuser(ctx.seed);
            ctx.spec.overrides.source.apply(&mut cfg);
            finalize(&mut cfg, ctx.force_det);
            train_source_multiuser(ctx.source_samples, &arch, &cfg, &run)?;
        }
        Mode::SingleUser => {
            let arch = SuArchitecture::desk(ctx.bench_k);
            let mut cfg = TrainConfig::source_singleuser(ctx.seed);
            ctx.spec.overrides.source.apply(&mut cfg);
            finalize(&mut cfg, ctx.force_det);
            train_source_singleuser(ctx.source_samples, &arch, &cfg, &run)?;
        }
    }
    Ok(ckpt)
}

fn ensure_rotation(
    ctx: &SeedContext,
    seed_dir: &Path,
    source_ckpt: &Path,
) -> Result<PathBuf, CliError> {
    let dir = seed_dir.join("rotation");
    let ckpt = dir.join("rotation.ckpt");
    if ckpt.exists() {
        return Ok(ckpt);
    }
    let run = RunDir::create(&dir)?;
    let mut cfg = TrainConfig::rotation_pretrain(ctx.seed);
    ctx.spec.overrides.rotation.apply(&mut cfg);
    finalize(&mut cfg, ctx.force_det);
    let artifacts = pretrain_rotation(ctx.target, source_ckpt, &cfg, &run)?;
    Ok(artifacts.checkpoint)
}

fn ensure_cpc(ctx: &SeedContext, seed_dir: &Path) -> Result<PathBuf, CliError> {
    let dir = seed_dir.join("cpc");
    let ckpt = dir.join("cpc.ckpt");
    if ckpt.exists() {
        return Ok(ckpt);
    }
    let run = RunDir::create(&dir)?;
    let spec = CpcSpec::desk(ctx.spec.dataset.feature_rows());
    let mut cfg = TrainConfig::cpc_pretrain(ctx.seed);
    ctx.spec.overrides.cpc.apply(&mut cfg);
    finalize(&mut cfg, ctx.force_det);
    let artifacts = pretrain_cpc(ctx.target, &spec, &cfg, &run)?;
    Ok(artifacts.checkpoint)
}

/// Run one method cell; returns the checkpoint to evaluate. `source_only`
/// writes no adaptation artifacts at all.
fn run_cell(
    ctx: &SeedContext,
    method: Method,
    rot_weight: Option<f64>,
    source_ckpt: &Path,
    rotation_ckpt: Option<&Path>,
    cpc_ckpt: Option<&Path>,
    run: &RunDir,
) -> Result<PathBuf, CliError> {
    if method == Method::SourceOnly {
        run.write_config(&serde_json::json!({
            "scenario": ctx.scenario,
            "method": method.name(),
            "seed": ctx.seed,
        }))?;
        return Ok(source_ckpt.to_path_buf());
    }

    let mut cfg = match ctx.mode {
        Mode::MultiUser => TrainConfig::adapt_multiuser(ctx.seed),
        Mode::SingleUser => TrainConfig::adapt_singleuser(ctx.seed),
    };
    match (ctx.mode, method) {
        (Mode::MultiUser, Method::ShotIm) => {
            cfg.lambda_rot = 0.0;
            cfg.lambda_cpc = 0.0;
            cfg.occupancy_gent = false;
        }
        (Mode::MultiUser, Method::ShotPp) => {
            cfg.occupancy_gent = false;
        }
        (Mode::MultiUser, Method::MuShotFi) => {}
        (Mode::MultiUser, Method::MuShotFiCpc) => {
            cfg = TrainConfig::adapt_multiuser_cpc(ctx.seed);
        }
        (Mode::SingleUser, Method::ShotIm) => {
            cfg.lambda_cls = 0.0;
            cfg.lambda_rot = 0.0;
            cfg.lambda_cpc = 0.0;
        }
        (Mode::SingleUser, Method::ShotPp) => {
            cfg.lambda_cpc = 0.0;
        }
        (Mode::SingleUser, Method::SuShotFi) => {}
        (mode, m) => {
            return Err(CliError::Config(format!(
                "method `{}` cannot run on {mode:?} data",
                m.name()
            )))
        }
    }
    ctx.spec.overrides.adapt.apply(&mut cfg);
    if let Some(v) = rot_weight {
        cfg.lambda_rot = v;
    }
    finalize(&mut cfg, ctx.force_det);

    let report = match ctx.mode {
        Mode::MultiUser => {
            let start = rotation_ckpt.unwrap_or(source_ckpt);
            if method == Method::MuShotFiCpc {
                let cpc = cpc_ckpt.ok_or_else(|| {
                    CliError::Run("mu_shot_fi_cpc requires a CPC checkpoint".into())
                })?;
                adapt_multiuser_with_cpc(ctx.target, start, cpc, &cfg, None, run)?
            } else {
                adapt_multiuser(ctx.target, start, &cfg, None, run)?
            }
        }
        Mode::SingleUser => {
            let cpc = if method == Method::SuShotFi {
                cpc_ckpt
            } else {
                None
            };
            adapt_singleuser(ctx.target, source_ckpt, cpc, &cfg, None, run)?
        }
    };
    Ok(report.final_checkpoint)
}

fn evaluate(
    ctx: &SeedContext,
    cell_name: &str,
    ckpt: &Path,
    metrics_path: PathBuf,
) -> Result<(), CliError> {
    let refs: Vec<&ndarray::Array3<f64>> = ctx.target.features().iter().collect();
    let (kind, metrics) = match ctx.mode {
        Mode::MultiUser => {
            let (_, stack, store, _) = load_mu(ckpt)?;
            let probs = stack.slot_probs(&store, &refs)?;
            let report = metric_report(&probs, ctx.target_labels)?;
            (ReportKind::MultiUser, serde_json::to_value(&report)?)
        }
        Mode::SingleUser => {
            let (arch, stack, store, _) = load_su(ckpt)?;
            let (_, probs) = stack.embed_probs(&store, &refs)?;
            let preds: Vec<usize> = probs.rows().into_iter().map(argmax).collect();
            let truth: Vec<usize> = ctx
                .target_labels
                .iter()
                .map(|l| {
                    let acts = l.activities();
                    if acts.len() != 1 {
                        return Err(CliError::Run(format!(
                            "single-user evaluation expects exactly one user, got {}",
                            acts.len()
                        )));
                    }
                    Ok(acts[0])
                })
                .collect::<Result<_, _>>()?;
            let report = single_user_metrics(&preds, &truth, arch.classes)?;
            (ReportKind::SingleUser, serde_json::to_value(&report)?)
        }
    };
    let cell = CellReport {
        scenario: ctx.scenario.to_string(),
        method: cell_name.to_string(),
        seed: ctx.seed,
        kind,
        metrics,
    };
    std::fs::write(metrics_path, serde_json::to_string_pretty(&cell)?)?;
    Ok(())
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
