use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drm_core::distortion::DistortionFn;
use drm_core::optimizer::Algorithm;
use drm_harness::experiment::{run_experiment, Outcome};
use drm_harness::stats::median;
use drm_harness::{ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "drm-opt", version, about = "Distortion risk measure optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximise a DRM over the normalised Gaussian-mixture portfolio
    Portfolio(PortfolioArgs),
    /// Policy optimization on the inventory chain
    Dppo(DppoArgs),
    /// Benchmarks
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
    /// Run an experiment described by a TOML file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output` in the file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration of a task as TOML
    Defaults {
        /// portfolio, dppo or tracker-bench
        task: String,
        #[arg(long, default_value = "cvar:0.7")]
        distortion: String,
        #[arg(long, default_value = "hybrid")]
        algo: String,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Quantile tracker MSE rate at a fixed parameter
    Tracker(TrackerArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Start from this TOML file instead of the built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0: one per core)
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    log_every: Option<u64>,
}

#[derive(Args)]
struct PortfolioArgs {
    /// Default cvar:0.7
    #[arg(long)]
    distortion: Option<String>,
    /// dm, qf, hybrid or batching; default hybrid
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DppoArgs {
    /// Default mean
    #[arg(long)]
    distortion: Option<String>,
    /// Sampling interval K0
    #[arg(long)]
    interval: Option<u64>,
    /// IS tolerance
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// 1 (toy chain) or 3
    #[arg(long)]
    echelons: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrackerArgs {
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    level: Option<f64>,
    #[command(flatten)]
    common: Common,
}

fn parse<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| HarnessError::Config {
        key: key.into(),
        reason: e.to_string(),
    })
}

fn base(file: &Option<PathBuf>, default: impl FnOnce() -> Result<ExperimentConfig, HarnessError>) -> Result<ExperimentConfig, HarnessError> {
    match file {
        Some(p) => ExperimentConfig::load(p),
        None => default(),
    }
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(v) = c.iters {
        cfg.sa.iterations = v;
    }
    if let Some(v) = c.reps {
        cfg.replications = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.log_every {
        cfg.sa.log_every = v;
    }
    cfg.output = Some(c.out.display().to_string());
}

fn report(outcome: &Outcome, dir: &Path) {
    match outcome {
        Outcome::Portfolio(r) => {
            println!("median final W2: {:.4}", median(&r.final_w2));
        }
        Outcome::Dppo(r) => {
            println!("random-policy baseline: {:.3}", r.baseline);
            println!("median warm-start mean return: {:.3}", median(&r.warmup_mean));
            println!("median final mean return: {:.3}", median(&r.final_eval));
        }
        Outcome::Tracker(r) => {
            match r.slope {
                Some(s) => println!("MSE slope: {s:.4}"),
                None => println!("MSE slope: too few points in the window"),
            }
            println!("mean final D: {:.4} (true {:.4})", r.d.mean.last().copied().unwrap_or(f64::NAN), r.true_d);
        }
    }
    println!("artifacts in {}", dir.display());
}

fn main_inner(cli: Cli) -> Result<(), HarnessError> {
    let cfg = match cli.command {
        Command::Portfolio(a) => {
            let mut cfg = base(&a.common.config, || {
                let algo: Algorithm = parse("algo", a.algo.as_deref().unwrap_or("hybrid"))?;
                let w: DistortionFn = parse("distortion", a.distortion.as_deref().unwrap_or("cvar:0.7"))?;
                Ok(ExperimentConfig::portfolio(algo, &w))
            })?;
            if a.common.config.is_some() {
                if let Some(v) = &a.algo {
                    cfg.sa.algorithm = v.clone();
                }
                if let Some(v) = &a.distortion {
                    cfg.sa.distortion = v.clone();
                }
            }
            if let Some(b) = a.batch {
                cfg.sa.batch_size = b;
            }
            apply_common(&mut cfg, &a.common);
            cfg
        }
        Command::Dppo(a) => {
            let mut cfg = base(&a.common.config, || {
                let w: DistortionFn = parse("distortion", a.distortion.as_deref().unwrap_or("mean"))?;
                Ok(ExperimentConfig::dppo(&w))
            })?;
            if let Some(v) = &a.distortion {
                cfg.sa.distortion = v.clone();
            }
            let d = &mut cfg.dppo;
            d.interval = a.interval.unwrap_or(d.interval);
            d.tolerance = a.tolerance.unwrap_or(d.tolerance);
            d.horizon = a.horizon.unwrap_or(d.horizon);
            d.hidden = a.hidden.unwrap_or(d.hidden);
            d.echelons = a.echelons.unwrap_or(d.echelons);
            apply_common(&mut cfg, &a.common);
            cfg
        }
        Command::Bench { which: Bench::Tracker(a) } => {
            let mut cfg = base(&a.common.config, || Ok(ExperimentConfig::tracker_bench()))?;
            cfg.sa.beta = a.beta.unwrap_or(cfg.sa.beta);
            cfg.tracker.level = a.level.unwrap_or(cfg.tracker.level);
            apply_common(&mut cfg, &a.common);
            cfg
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output = Some(o.display().to_string());
            }
            cfg
        }
        Command::Defaults { task, distortion, algo } => {
            let w: DistortionFn = parse("distortion", &distortion)?;
            let cfg = match task.as_str() {
                "portfolio" => ExperimentConfig::portfolio(parse("algo", &algo)?, &w),
                "dppo" => ExperimentConfig::dppo(&w),
                "tracker-bench" => ExperimentConfig::tracker_bench(),
                other => {
                    return Err(HarnessError::Config {
                        key: "task".into(),
                        reason: format!("unknown task {other:?}"),
                    })
                }
            };
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
    };
    let dir = PathBuf::from(cfg.output.clone().ok_or_else(|| HarnessError::Config {
        key: "output".into(),
        reason: "no output directory given".into(),
    })?);
    let outcome = run_experiment(&cfg, &dir)?;
    report(&outcome, &dir);
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Config { .. } | HarnessError::ConfigSyntax(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
