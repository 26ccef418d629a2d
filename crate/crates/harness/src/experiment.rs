//! Replicated runs and their artifacts.
//!
//! Replication `i` uses seed `cfg.seed + i`. Runs execute on a bounded
//! rayon pool and results are collected in replication order, so every
//! CSV is independent of scheduling.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drm_core::estimators::{g1_accumulate, g3_kernel, quantile_step, qgrad_step_in_place};
use drm_core::inventory::dppo::{run_dppo, DppoConfig, DppoRun};
use drm_core::inventory::random_baseline;
use drm_core::model::{parse_model, ModelSample, ObservableModel};
use drm_core::optimizer::{empirical_quantile, run_rngs, run_with_reference, Exponents, RunHistory, Schedules};
use drm_core::oracle::WorstCase;
use drm_core::DrmError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ExperimentConfig, Task};
use crate::error::{io_err, HarnessError, Result};
use crate::stats::{log_spaced, median, rate_slope, AggregateCurve};
use crate::svg::{Plot, Scale};

/// Tracker benchmark slope window.
pub const SLOPE_WINDOW: (u64, u64) = (1_000, 100_000);

#[derive(Debug, Clone)]
pub struct PortfolioResult {
    pub runs: Vec<RunHistory>,
    pub w2: AggregateCurve,
    pub drm: AggregateCurve,
    pub final_w2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DppoResult {
    pub runs: Vec<DppoRun>,
    pub returns: AggregateCurve,
    /// Mean return of uniform-random orders.
    pub baseline: f64,
    pub final_eval: Vec<f64>,
    pub warmup_mean: Vec<f64>,
}

/// One fixed-θ tracker run, logged at log-spaced iteration counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerRun {
    pub k: Vec<u64>,
    pub q: Vec<f64>,
    /// First coordinate of the quantile-gradient tracker.
    pub d: Vec<f64>,
    pub sq_err: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrackerResult {
    pub runs: Vec<TrackerRun>,
    pub true_q: f64,
    /// `∂q/∂θ_0` by central differences of the analytic law.
    pub true_d: f64,
    pub mse: AggregateCurve,
    pub d: AggregateCurve,
    /// Over [`SLOPE_WINDOW`]; `None` when too few points fall inside.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Portfolio(PortfolioResult),
    Dppo(DppoResult),
    Tracker(TrackerResult),
}

impl Outcome {
    fn curve(&self) -> &AggregateCurve {
        match self {
            Outcome::Portfolio(r) => &r.w2,
            Outcome::Dppo(r) => &r.returns,
            Outcome::Tracker(r) => &r.mse,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

fn replicate<T: Send>(cfg: &ExperimentConfig, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let seeds: Vec<u64> = (0..cfg.replications as u64).map(|i| cfg.seed + i).collect();
    pool(cfg.workers)?.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}

/// Run every replication without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.task {
        Task::Portfolio => portfolio(cfg).map(Outcome::Portfolio),
        Task::Dppo => dppo(cfg).map(Outcome::Dppo),
        Task::TrackerBench => tracker_bench(cfg).map(Outcome::Tracker),
    }
}

fn portfolio(cfg: &ExperimentConfig) -> Result<PortfolioResult> {
    let model = parse_model(&cfg.portfolio.model)?;
    let base = cfg.sa.to_sa_config(model.dim())?;
    let oracle = WorstCase::new(&base.distortion)?;
    let runs = replicate(cfg, |seed| {
        let mut sa = base.clone();
        sa.seed = seed;
        Ok(run_with_reference(&sa, model.as_ref(), Some(&oracle))?)
    })?;
    let k = runs[0].records.iter().map(|r| r.k).collect::<Vec<_>>();
    let col = |f: &dyn Fn(&drm_core::optimizer::Record) -> f64| -> Vec<Vec<f64>> {
        runs.iter().map(|h| h.records.iter().map(f).collect()).collect()
    };
    let w2 = AggregateCurve::from_runs(k.clone(), &col(&|r| r.w2.unwrap_or(f64::NAN)))?;
    let drm = AggregateCurve::from_runs(k, &col(&|r| r.drm))?;
    let final_w2 = runs.iter().map(|h| h.final_w2().unwrap_or(f64::NAN)).collect();
    Ok(PortfolioResult { runs, w2, drm, final_w2 })
}

fn dppo_config(cfg: &ExperimentConfig, seed: u64) -> Result<DppoConfig> {
    let mut d = cfg.dppo.to_dppo_config(&cfg.sa)?;
    d.sa.seed = seed;
    Ok(d)
}

fn dppo(cfg: &ExperimentConfig) -> Result<DppoResult> {
    let env = cfg.dppo.env()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let baseline = random_baseline(&env, cfg.dppo.horizon, cfg.dppo.discount, cfg.dppo.baseline_episodes, &mut rng)?;
    let runs = replicate(cfg, |seed| Ok(run_dppo(&dppo_config(cfg, seed)?)?))?;
    let k = runs[0].records.iter().map(|r| r.k).collect();
    let ret: Vec<Vec<f64>> = runs.iter().map(|r| r.records.iter().map(|x| x.mean_return).collect()).collect();
    Ok(DppoResult {
        returns: AggregateCurve::from_runs(k, &ret)?,
        baseline,
        final_eval: runs.iter().map(|r| r.final_eval.unwrap_or(f64::NAN)).collect(),
        warmup_mean: runs.iter().map(|r| r.warmup_mean).collect(),
        runs,
    })
}

/// Quantile and quantile-gradient trackers at a fixed θ, with the step
/// and bandwidth schedules of the `[sa]` section.
pub fn tracker_run(model: &dyn ObservableModel, theta: &[f64], level: f64, schedules: &Schedules, warmup: usize, log_at: &[u64], true_q: f64, seed: u64) -> Result<TrackerRun> {
    model.validate(theta)?;
    let (mut rng, _) = run_rngs(seed);
    let mut draws = Vec::with_capacity(warmup.max(1));
    model.sample_batch(theta, warmup.max(1), &mut rng, &mut draws);
    let mut ys: Vec<f64> = draws.iter().map(|s| s.y).collect();
    ys.sort_by(f64::total_cmp);
    let mut q = empirical_quantile(&ys, level);
    let mut d = vec![0.0; theta.len()];
    let mut g1 = vec![0.0; theta.len()];
    let total = log_at.last().copied().unwrap_or(0);
    let mut out = TrackerRun {
        k: Vec::with_capacity(log_at.len()),
        q: Vec::with_capacity(log_at.len()),
        d: Vec::with_capacity(log_at.len()),
        sq_err: Vec::with_capacity(log_at.len()),
    };
    let mut next = 0;
    let mut sample = ModelSample::default();
    let mut buf = Vec::with_capacity(1);
    for k in 0..total {
        buf.clear();
        model.sample_batch(theta, 1, &mut rng, &mut buf);
        std::mem::swap(&mut sample, &mut buf[0]);
        g1.iter_mut().for_each(|v| *v = 0.0);
        g1_accumulate(&sample, q, 1.0, &mut g1);
        let g3 = g3_kernel(sample.y, q, schedules.h.value(k))?;
        qgrad_step_in_place(&mut d, &g1, g3, schedules.d.value(k), 1.0);
        q = quantile_step(q, level, sample.y, schedules.q.value(k), 1.0);
        if !q.is_finite() || d.iter().any(|v| !v.is_finite()) {
            return Err(DrmError::NonFinite {
                iteration: k,
                detail: "tracker".into(),
            }
            .into());
        }
        while next < log_at.len() && log_at[next] == k + 1 {
            out.k.push(k + 1);
            out.q.push(q);
            out.d.push(d[0]);
            out.sq_err.push((q - true_q) * (q - true_q));
            next += 1;
        }
    }
    Ok(out)
}

fn tracker_bench(cfg: &ExperimentConfig) -> Result<TrackerResult> {
    let t = &cfg.tracker;
    let model = parse_model(&t.model)?;
    let law = model.law(&t.theta).ok_or_else(|| crate::error::config_err("tracker.model", "needs a closed-form law"))?;
    let true_q = law.quantile(t.level);
    let h = 1e-5;
    let mut tp = t.theta.clone();
    tp[0] += h;
    let up = model.law(&tp).expect("law exists").quantile(t.level);
    tp[0] -= 2.0 * h;
    let down = model.law(&tp).expect("law exists").quantile(t.level);
    let true_d = (up - down) / (2.0 * h);

    let s = &cfg.sa;
    let e = Exponents {
        alpha: s.alpha,
        beta: s.beta,
        gamma: s.gamma,
        eta: s.eta,
    };
    let schedules = Schedules::from_initial(s.k0, s.gamma_d0, s.gamma_q0, s.gamma_theta0, s.h0, e)?;
    let log_at = log_spaced(1, s.iterations, t.points);
    let runs = replicate(cfg, |seed| tracker_run(model.as_ref(), &t.theta, t.level, &schedules, s.warmup, &log_at, true_q, seed))?;
    let k = runs[0].k.clone();
    let mse = AggregateCurve::from_runs(k.clone(), &runs.iter().map(|r| r.sq_err.clone()).collect::<Vec<_>>())?;
    let d = AggregateCurve::from_runs(k, &runs.iter().map(|r| r.d.clone()).collect::<Vec<_>>())?;
    let slope = rate_slope(&mse, SLOPE_WINDOW.0, SLOPE_WINDOW.1).ok();
    Ok(TrackerResult {
        runs,
        true_q,
        true_d,
        mse,
        d,
        slope,
    })
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(io_err(path))
}

fn tracker_csv(r: &TrackerRun) -> String {
    let mut out = String::from("k,q,d,sq_err\n");
    for i in 0..r.k.len() {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", r.k[i], r.q[i], r.d[i], r.sq_err[i]);
    }
    out
}

fn finite_median(v: &[f64]) -> Option<f64> {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    (!f.is_empty()).then(|| median(&f))
}

/// Run the experiment and write its artifacts into `dir`:
/// `config.toml`, `run_NNN.csv` per replication, `aggregate.csv`,
/// `summary.csv`, `metadata.json`, `curve.svg`, plus task extras.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(dir.join("config.toml"), cfg.to_toml()?)?;
    let outcome = execute(cfg)?;
    let seed = |i: usize| cfg.seed + i as u64;
    let mut summary = String::new();
    let mut meta = json!({
        "task": cfg.task.name(),
        "replications": cfg.replications,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let (title, y_label, y_scale) = match &outcome {
        Outcome::Portfolio(r) => {
            summary.push_str("run,seed,final_w2,final_drm\n");
            for (i, h) in r.runs.iter().enumerate() {
                write(dir.join(format!("run_{i:03}.csv")), h.to_csv(true))?;
                let last = h.last().expect("at least one record");
                let _ = writeln!(summary, "{i},{},{:e},{:e}", seed(i), last.w2.unwrap_or(f64::NAN), last.drm);
            }
            write(dir.join("aggregate_drm.csv"), r.drm.to_csv())?;
            meta["median_final_w2"] = json!(finite_median(&r.final_w2));
            ("W2 to the worst-case law", "W2", Scale::Log)
        }
        Outcome::Dppo(r) => {
            summary.push_str("run,seed,warmup_mean,final_eval,episodes,resamples\n");
            let d = dppo_config(cfg, cfg.seed)?;
            for (i, run) in r.runs.iter().enumerate() {
                write(dir.join(format!("run_{i:03}.csv")), run.to_csv())?;
                let last = run.records.last();
                let _ = writeln!(
                    summary,
                    "{i},{},{:e},{:e},{},{}",
                    seed(i),
                    run.warmup_mean,
                    run.final_eval.unwrap_or(f64::NAN),
                    last.map_or(0, |x| x.episodes),
                    last.map_or(0, |x| x.resamples)
                );
                if cfg.dppo.checkpoints {
                    write_checkpoint(dir, i, seed(i), &d, run)?;
                }
            }
            meta["baseline"] = json!(r.baseline);
            meta["median_final_eval"] = json!(finite_median(&r.final_eval));
            meta["median_warmup_mean"] = json!(finite_median(&r.warmup_mean));
            ("Mean episode return", "return", Scale::Linear)
        }
        Outcome::Tracker(r) => {
            summary.push_str("run,seed,final_q,final_d,final_sq_err\n");
            for (i, run) in r.runs.iter().enumerate() {
                write(dir.join(format!("run_{i:03}.csv")), tracker_csv(run))?;
                let n = run.k.len().saturating_sub(1);
                let _ = writeln!(summary, "{i},{},{:e},{:e},{:e}", seed(i), run.q[n], run.d[n], run.sq_err[n]);
            }
            write(dir.join("aggregate_d.csv"), r.d.to_csv())?;
            meta["true_q"] = json!(r.true_q);
            meta["true_d"] = json!(r.true_d);
            meta["mse_slope"] = json!(r.slope);
            meta["slope_window"] = json!([SLOPE_WINDOW.0, SLOPE_WINDOW.1]);
            ("Quantile tracker MSE", "MSE", Scale::Log)
        }
    };
    write(dir.join("aggregate.csv"), outcome.curve().to_csv())?;
    write(dir.join("summary.csv"), summary)?;
    let svg = Plot {
        title,
        y_label,
        x_scale: if cfg.task == Task::TrackerBench { Scale::Log } else { Scale::Linear },
        y_scale,
    }
    .render(outcome.curve());
    write(dir.join("curve.svg"), svg)?;
    meta["elapsed_seconds"] = json!(started.elapsed().as_secs_f64());
    write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(outcome)
}

/// Flat little-endian f64 dump of the final θ with a JSON sidecar.
fn write_checkpoint(dir: &Path, i: usize, seed: u64, cfg: &DppoConfig, run: &DppoRun) -> Result<()> {
    let bytes: Vec<u8> = run.theta.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(dir.join(format!("checkpoint_{i:03}.bin")), bytes)?;
    let p = &cfg.policy;
    let side = json!({
        "dtype": "f64-le",
        "len": run.theta.len(),
        "inputs": p.inputs,
        "hidden": p.hidden,
        "outputs": p.outputs,
        "action_offset": p.action_offset,
        "action_scale": p.action_scale,
        "layout": ["w1", "b1", "w2", "b2", "log_std"],
        "iterations": cfg.sa.total_iterations,
        "seed": seed,
        "final_eval": run.final_eval,
    });
    write(dir.join(format!("checkpoint_{i:03}.json")), serde_json::to_string_pretty(&side)?)
}

/// Read a checkpoint written by [`run_experiment`].
pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 8 != 0 {
        return Err(DrmError::Parse {
            what: "checkpoint",
            input: path.display().to_string(),
            reason: format!("length {} is not a multiple of 8", bytes.len()),
        }
        .into());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
