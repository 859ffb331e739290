use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ntk_lab::kv;
use ntk_lab::models::{initialize, InitKind, LrScaling, ModelKind, ModelSpec, ParamRegime};
use ntk_lab::ntk::{empirical_ntk, GramMatrix};
use ntk_lab::oracle::{brute_force_ntk, eigenmode_decay, evolve_residuals, lazy_training_check, max_relative_deviation, ResidualState};
use ntk_lab::report::{plot_metrics, reactivation_stats, stats_to_text, Tolerance};
use ntk_lab::runner::{self, read_metrics_csv, split_values, ExperimentConfig, RunStatus, META_FILE};
use ntk_lab::{NtkError, Result};

#[derive(Parser)]
#[command(name = "ntk-lab", version, about = "Empirical NTK dynamics under task switches")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of `--vary key=v1,v2,...` overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        vary: Vec<String>,
    },
    /// Reference computations for manual inspection.
    #[command(subcommand)]
    Oracle(OracleCommand),
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "mlp")]
    model: ModelKind,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Actual vs static-kernel residuals under full-batch gradient descent.
    Lazy {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
    },
    /// Tape-based NTK against the explicit-Jacobian NTK.
    NtkCheck {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Residual recursion against the per-eigenmode closed form.
    Decay {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// One curve per CSV with task switches marked.
    Plot {
        #[arg(long)]
        metric: String,
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reactivation statistics per task switch.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Window in probe steps (default: one epoch, from run.meta).
        #[arg(long)]
        window: Option<usize>,
        /// Absolute (`0.5`) or relative to the baseline (`5%`).
        #[arg(long, default_value = "5%")]
        tol: String,
        /// Output file (default: stats.txt next to the CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| NtkError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_text(&text)
}

fn report_run(out: &runner::RunOutput, dir: &Path) -> Result<bool> {
    println!("{}: {} records", dir.display(), out.records().len());
    match out.status {
        RunStatus::Completed => Ok(true),
        RunStatus::Diverged { iteration } => {
            eprintln!("run diverged at iteration {iteration}; partial metrics kept in {}", dir.display());
            Ok(false)
        }
    }
}

fn probe_model(args: &ModelArgs) -> Result<(ModelSpec, ntk_lab::tensor::ParamVector, ntk_lab::ntk::ProbeSet)> {
    let mut cfg = ExperimentConfig {
        probe_size: args.n,
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    cfg.model = args.model;
    cfg.width = args.width;
    let (train, _) = runner::load_data(&cfg)?;
    let first = cfg.schedule.tasks[0].spec.distribution(train.num_classes())?;
    let spec = runner::model_spec(&cfg, &train)?;
    let regime = ParamRegime {
        init: InitKind::KaimingNormal,
        lr_base: 1.0,
        lr_scaling: LrScaling::None,
        reference_width: args.width,
    };
    let params = initialize(&spec, &regime, args.seed)?;
    let probe = runner::draw_probe(&cfg, &train, &first)?;
    Ok((spec, params, probe))
}

fn oracle(cmd: OracleCommand) -> Result<()> {
    match cmd {
        OracleCommand::Lazy { model, steps, eta } => {
            let (spec, params, probe) = probe_model(&model)?;
            let targets = vec![1.0; probe.len()];
            let rep = lazy_training_check(&spec, &params, &probe, &targets, eta, steps)?;
            for (t, d) in rep.deviations.iter().enumerate() {
                if t % 10 == 0 || t == steps {
                    println!("step {t:>5}  deviation {d:.6e}");
                }
            }
            println!("max deviation {:.6e}", rep.max_deviation());
        }
        OracleCommand::NtkCheck { model } => {
            let (spec, params, probe) = probe_model(&model)?;
            let a = empirical_ntk(&spec, &params, &probe)?;
            let b = brute_force_ntk(&spec, &params, &probe)?;
            println!("{} parameters, n = {}", params.dim(), probe.len());
            println!("max entrywise relative deviation {:.3e}", max_relative_deviation(&a, &b));
        }
        OracleCommand::Decay { n, steps, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feats: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = GramMatrix::from_features(n, n, &feats)?;
            let spec = k.spectrum()?;
            let eta = 1.0 / spec.eigenvalues()[0];
            let e0 = ResidualState::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
            let traj = evolve_residuals(&e0, &k, eta, steps)?;
            let mut worst: f64 = 0.0;
            for (t, state) in traj.iter().enumerate() {
                let closed = eigenmode_decay(&e0, &spec, eta, t)?;
                for (a, b) in spec.project(&state.e).iter().zip(&closed) {
                    worst = worst.max((a - b).abs());
                }
            }
            println!("eta = 1/lambda_max = {eta:.6e}; max |recursion - closed form| over {steps} steps: {worst:.3e}");
        }
    }
    Ok(())
}

fn report(cmd: ReportCommand) -> Result<()> {
    match cmd {
        ReportCommand::Plot { metric, inputs, out } => {
            plot_metrics(&inputs, &metric, &out)?;
            println!("wrote {}", out.display());
        }
        ReportCommand::Stats { input, window, tol, out } => {
            let tolerance = Tolerance::parse(&tol)?;
            let log = read_metrics_csv(&input)?;
            let dir = input.parent().unwrap_or(Path::new("."));
            let window = match window {
                Some(w) => w,
                None => {
                    let meta_path = dir.join(META_FILE);
                    let text = fs::read_to_string(&meta_path).map_err(|_| {
                        NtkError::Usage(format!("no {} next to the CSV; pass --window", META_FILE))
                    })?;
                    kv::parse(&text)?
                        .into_iter()
                        .find(|(k, _)| k == "probe_steps_per_epoch")
                        .and_then(|(_, v)| v.parse().ok())
                        .ok_or_else(|| NtkError::Usage(format!("{} lacks probe_steps_per_epoch; pass --window", meta_path.display())))?
                }
            };
            let stats = reactivation_stats(&log.records, window, tolerance)?;
            let text = stats_to_text(&stats, window, tolerance);
            let out = out.unwrap_or_else(|| dir.join("stats.txt"));
            fs::write(&out, &text).map_err(|e| NtkError::io(&out, e))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            let res = runner::run_to_dir(&cfg)?;
            report_run(&res, &cfg.out)
        }
        Command::Sweep { config, vary } => {
            let base = load_config(&config)?;
            let mut axes = Vec::new();
            for v in &vary {
                let (k, list) = v
                    .split_once('=')
                    .ok_or_else(|| NtkError::Usage(format!("--vary expects key=v1,v2,..., got {v:?}")))?;
                axes.push((k.trim().to_string(), split_values(list)));
            }
            let mut all_ok = true;
            for cfg in runner::sweep_configs(&base, &axes)? {
                let res = runner::run_to_dir(&cfg)?;
                all_ok &= report_run(&res, &cfg.out)?;
            }
            Ok(all_ok)
        }
        Command::Oracle(cmd) => oracle(cmd).map(|_| true),
        Command::Report(cmd) => report(cmd).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
