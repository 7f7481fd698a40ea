//! `shotfi`: experiment harness CLI. Exit codes: 0 success, 2 config
//! error, 3 run failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use exp_cli::{gen_synthetic, report_command, run_experiment, CliError, ExperimentSpec, ReportFormat};

const GEN_HELP: &str = "\
Config file (TOML). All keys optional unless noted:
  seed               u64     generator seed (default 0)
  k | K              usize   activity classes (default 9)
  m | M              usize   label slot capacity (default 6)
  n_source           usize   source sample count, >= 1 (default 200)
  n_target           usize   target sample count, >= 1 (default 200)
  occupancy | occupancy_dist  [f64]  P(sample has exactly c users), c = 0..len-1;
                             renormalized; len <= m+1 (default [0.2,0.3,0.3,0.2])
  shift              string  \"frequency\" | \"room\" | \"combined\" (default frequency)
  source_carrier_hz | carrier_src_hz  f64  (default 2.4e9)
  target_carrier_hz | carrier_tgt_hz  f64  (default 5.0e9; read by frequency/combined)
  n_r, n_t           usize   rx/tx antennas (default 3, 3)
  n_sc               usize   subcarriers (default 30)
  t_len              usize   samples per capture (default 3000)
  sample_rate_hz     f64     capture rate (default 1000)
  noise_std          f64     complex noise std (default 0.05)
  n_static_paths     usize   background multipath count (default 4)
  paths_per_user     usize   body-path count per user (default 2)";

const RUN_HELP: &str = "\
Spec file (TOML):
  scenario   string  required. One of:
             cross_room | cross_frequency | combined        multi-user
             su_cross_room | su_cross_torso | su_cross_face  single-user
             synthetic_<name>                                free-form
             Single-user scenarios map onto the simulator's domain axes:
             su_cross_room=room, su_cross_face=frequency, su_cross_torso=combined.
  methods    [string] required, non-empty. source_only | shot_im | shot_pp |
             mu_shot_fi | mu_shot_fi_cpc (multi-user only) | su_shot_fi
             (single-user only). shot_im/shot_pp use the standard diversity
             marginal; mu_shot_fi* use the occupancy-weighted one.
  seeds      [u64]   required, non-empty, unique. Training seeds; the
             dataset is shared and fixed by dataset.seed.
  lambda_rot_sweep  [f64]  optional. Extra adaptation cells per
             rotation-bearing method, one per listed weight.

  [dataset]  synthetic geometry (all optional; desk defaults):
    seed=7  n_source=256  n_target=256  n_r=1  n_t=1  n_sc=16
    sample_rate_hz=50  noise_std=0.05  n_static_paths=4  paths_per_user=2
    source_carrier_hz=2.4e9  target_carrier_hz=5.0e9
    k      activity classes  (default 3 multi-user, 6 single-user)
    m      slot capacity     (default 3; forced 1 on single-user scenarios)
    occupancy  [f64] user-count distribution (single-user must be [0.0,1.0])
    t_len  capture length    (default 100 multi-user, 140 single-user)
    shift  \"frequency\"|\"room\"|\"combined\"  only read by synthetic_* scenarios
    single_user  bool        only read by synthetic_* scenarios

  [overrides.source] [overrides.rotation] [overrides.cpc] [overrides.adapt]
    partial trainer overrides, each optional:
    epochs, batch_size, learning_rate, lambda_ent, lambda_rot, lambda_cpc,
    lambda_cls, label_smoothing, deterministic

Environment: SHOTFI_DETERMINISTIC=1 forces deterministic kernels over any
`deterministic` override. Failures of one seed are recorded under
runs/<scenario>/failures/ and do not stop other seeds (exit 3 at the end).";

#[derive(Parser)]
#[command(
    name = "shotfi",
    about = "Wi-Fi sensing domain-adaptation experiment harness",
    long_about = "Generates synthetic CSI benchmarks, runs source training and \
                  source-free adaptation over seed sweeps, and aggregates metric \
                  tables and plots.\n\nExit codes: 0 success, 2 config error, 3 run failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic source/target benchmark to csi manifests.
    GenSynthetic {
        /// Generator config file (TOML).
        #[arg(long, long_help = GEN_HELP)]
        config: PathBuf,
        /// Output directory; writes <out>/source and <out>/target.
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute an experiment spec: dataset, source training, adaptation
    /// per method, evaluation, one metrics file per (method, seed) cell.
    Run {
        /// Experiment spec file (TOML).
        #[arg(long, long_help = RUN_HELP)]
        spec: PathBuf,
        /// Experiment output root.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate one or more run directories into mean ± std tables.
    Report {
        /// Run directories (the --out of previous `run` calls, or any
        /// parents of cell directories holding metrics.json files).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Table format written to <out>/report.{md,csv} and stdout.
        #[arg(long, value_enum, default_value_t = Fmt::Md)]
        format: Fmt,
        /// Also write loss-curve and metric-bar SVGs under <out>/plots.
        #[arg(long)]
        plots: bool,
        /// Report output directory.
        #[arg(long, default_value = "report-out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fmt {
    Md,
    Csv,
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::GenSynthetic { config, out } => {
            let paths = gen_synthetic(&config, &out)?;
            println!("source manifest: {}", paths.source_manifest.display());
            println!("target manifest: {}", paths.target_manifest.display());
            Ok(0)
        }
        Cmd::Run { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec.display())))?;
            let spec = ExperimentSpec::from_toml(&text)?;
            let outcome = run_experiment(&spec, &out)?;
            println!(
                "completed {} cells ({} failed seeds)",
                outcome.cells.len(),
                outcome.failures.len()
            );
            for f in &outcome.failures {
                eprintln!("seed {} failed at {}: {}", f.seed, f.stage, f.error);
            }
            Ok(if outcome.failures.is_empty() { 0 } else { 3 })
        }
        Cmd::Report {
            runs,
            format,
            plots,
            out,
        } => {
            let fmt = match format {
                Fmt::Md => ReportFormat::Md,
                Fmt::Csv => ReportFormat::Csv,
            };
            let text = report_command(&runs, fmt, plots, &out)?;
            print!("{text}");
            Ok(0)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
