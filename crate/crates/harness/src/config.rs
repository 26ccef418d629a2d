//! Experiment configuration, read from and written to TOML.

use std::path::Path;

use drm_core::distortion::{DistortionFn, DistortionKind, Grid};
use drm_core::inventory::dppo::DppoConfig;
use drm_core::inventory::EchelonParams;
use drm_core::optimizer::{Algorithm, BoxBounds, Exponents, SaConfig, Schedules};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Portfolio,
    Dppo,
    TrackerBench,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Portfolio => "portfolio",
            Task::Dppo => "dppo",
            Task::TrackerBench => "tracker-bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub replications: usize,
    /// Replication `i` uses seed `seed + i`.
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub sa: SaSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
    #[serde(default)]
    pub dppo: DppoSection,
    #[serde(default)]
    pub tracker: TrackerSection,
}

/// Optimizer settings. Step sizes are values at `k = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSection {
    pub algorithm: String,
    pub distortion: String,
    /// `uniform:N` (levels `(i+1)/(N+2)`) or `sqrt:M` (levels `sqrt(i/M)`).
    pub grid: String,
    pub iterations: u64,
    pub batch_size: usize,
    pub log_every: u64,
    pub k0: f64,
    pub gamma_d0: f64,
    pub gamma_q0: f64,
    pub gamma_theta0: f64,
    pub h0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    #[serde(default)]
    pub lq: f64,
    #[serde(default)]
    pub centered: bool,
    pub warmup: usize,
    pub box_radius: f64,
    #[serde(default = "default_w2_resolution")]
    pub w2_resolution: usize,
    /// Batch size the θ step constant is tuned for; the batching baseline
    /// scales `gamma_theta0` by `batch_size / reference_batch`.
    #[serde(default = "default_reference_batch")]
    pub reference_batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

fn default_w2_resolution() -> usize {
    1000
}

fn default_reference_batch() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    pub model: String,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self {
            model: "mixture:d=10".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppoSection {
    /// 1 for the toy chain, 3 for the reference chain.
    pub echelons: usize,
    pub interval: u64,
    pub tolerance: f64,
    pub horizon: usize,
    pub discount: f64,
    pub hidden: usize,
    pub eval_episodes: usize,
    pub baseline_episodes: usize,
    pub checkpoints: bool,
}

impl Default for DppoSection {
    fn default() -> Self {
        Self {
            echelons: 1,
            interval: 250,
            tolerance: 0.2,
            horizon: 100,
            discount: 0.99,
            hidden: 32,
            eval_episodes: 1000,
            baseline_episodes: 10_000,
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    pub model: String,
    pub theta: Vec<f64>,
    pub level: f64,
    /// Number of log-spaced logging points.
    pub points: usize,
}

impl Default for TrackerSection {
    fn default() -> Self {
        Self {
            model: "gauss-location".into(),
            theta: vec![0.0],
            level: 0.7,
            points: 40,
        }
    }
}

impl SaSection {
    /// Per-distortion constants of the portfolio experiments; CVaR values
    /// for anything outside the four reference instances.
    pub fn portfolio(algorithm: Algorithm, distortion: &DistortionFn) -> Self {
        let (k0, d0, q0, t0, h0, grid) = match distortion.kind() {
            DistortionKind::SShape(_) => (1e3, 6.25e-2, 0.25, 6.25e-2, 1e-3, "uniform:98"),
            DistortionKind::Wang(_) => (1e3, 0.1, 1.0, 1e-2, 1e-2, "sqrt:250"),
            DistortionKind::DiscontinuousComposite(_) => (5e2, 0.25, 0.25, 6.25e-2, 1e-2, "uniform:98"),
            _ => (5e2, 0.25, 0.25, 6.25e-2, 1e-2, "uniform:98"),
        };
        let e = Exponents::default();
        Self {
            algorithm: algorithm.name().into(),
            distortion: distortion.to_string(),
            grid: grid.into(),
            iterations: 200_000,
            batch_size: 4,
            log_every: 500,
            k0,
            gamma_d0: d0,
            gamma_q0: q0,
            gamma_theta0: t0,
            h0,
            alpha: e.alpha,
            beta: e.beta,
            gamma: e.gamma,
            eta: e.eta,
            lq: 0.0,
            centered: false,
            warmup: 256,
            box_radius: 2.5,
            w2_resolution: default_w2_resolution(),
            reference_batch: default_reference_batch(),
            theta0: None,
        }
    }

    /// Policy-optimization constants (hybrid form, one episode per batch).
    pub fn dppo(distortion: &DistortionFn) -> Self {
        let e = Exponents::default();
        Self {
            algorithm: Algorithm::Hybrid.name().into(),
            distortion: distortion.to_string(),
            grid: "uniform:98".into(),
            iterations: 50_000,
            batch_size: 1,
            log_every: 1000,
            k0: 2.5e5,
            gamma_d0: 5.0,
            gamma_q0: 1e-3,
            gamma_theta0: 2e-6,
            h0: 1.0,
            alpha: e.alpha,
            beta: e.beta,
            gamma: e.gamma,
            eta: e.eta,
            lq: 0.0,
            centered: true,
            warmup: 256,
            box_radius: 10.0,
            w2_resolution: default_w2_resolution(),
            reference_batch: 1,
            theta0: None,
        }
    }

    /// Quantile tracking at fixed θ.
    pub fn tracker() -> Self {
        Self {
            algorithm: Algorithm::Qf.name().into(),
            distortion: "mean".into(),
            grid: "uniform:98".into(),
            iterations: 100_000,
            batch_size: 1,
            log_every: 1000,
            k0: 1.0,
            gamma_d0: 1.0,
            gamma_q0: 1.0,
            gamma_theta0: 1.0,
            h0: 1.0,
            warmup: 1,
            box_radius: 10.0,
            ..Self::portfolio(Algorithm::Qf, &DistortionFn::identity())
        }
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        self.algorithm.parse().map_err(|e| config_err("sa.algorithm", e))
    }

    pub fn distortion(&self) -> Result<DistortionFn> {
        self.distortion.parse().map_err(|e| config_err("sa.distortion", e))
    }

    pub fn grid(&self) -> Result<Grid> {
        let bad = |reason: String| config_err("sa.grid", reason);
        let (kind, n) = self
            .grid
            .split_once(':')
            .ok_or_else(|| bad(format!("expected `uniform:N` or `sqrt:M`, got {:?}", self.grid)))?;
        let n: usize = n.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let g = match kind.trim() {
            "uniform" => Grid::uniform(n),
            "sqrt" => Grid::sqrt(n),
            other => return Err(bad(format!("unknown grid kind {other:?}"))),
        };
        g.map_err(|e| bad(e.to_string()))
    }

    /// The full optimizer configuration for a model of dimension `dim`.
    pub fn to_sa_config(&self, dim: usize) -> Result<SaConfig> {
        let algorithm = self.algorithm()?;
        let check = |key: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(key, format!("must be positive and finite, got {v}")))
            }
        };
        check("sa.gamma_d0", self.gamma_d0)?;
        check("sa.gamma_q0", self.gamma_q0)?;
        check("sa.gamma_theta0", self.gamma_theta0)?;
        check("sa.h0", self.h0)?;
        check("sa.box_radius", self.box_radius)?;
        if !(self.k0 >= 0.0 && self.k0.is_finite()) {
            return Err(config_err("sa.k0", format!("must be nonnegative, got {}", self.k0)));
        }
        if self.batch_size == 0 {
            return Err(config_err("sa.batch_size", "must be positive"));
        }
        if self.reference_batch == 0 {
            return Err(config_err("sa.reference_batch", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(config_err("sa.log_every", "must be positive"));
        }
        let mut theta0 = self.gamma_theta0;
        if algorithm == Algorithm::Batching {
            theta0 *= self.batch_size as f64 / self.reference_batch as f64;
        }
        let e = Exponents {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            eta: self.eta,
        };
        let schedules = Schedules::from_initial(self.k0, self.gamma_d0, self.gamma_q0, theta0, self.h0, e).map_err(|err| config_err("sa", err))?;
        let bounds = BoxBounds::symmetric(dim, self.box_radius).map_err(|err| config_err("sa.box_radius", err))?;
        let mut cfg = SaConfig::new(algorithm, self.grid()?, self.distortion()?, schedules, bounds);
        cfg.batch_size = self.batch_size;
        cfg.total_iterations = self.iterations;
        cfg.log_every = self.log_every;
        cfg.lq = self.lq;
        cfg.centered = self.centered;
        cfg.warmup = self.warmup;
        cfg.w2_resolution = self.w2_resolution;
        cfg.theta0 = self.theta0.clone();
        if let Err(err) = cfg.validate(dim) {
            let key = match &err {
                drm_core::DrmError::NonDifferentiable { .. } => "sa.distortion",
                drm_core::DrmError::DimensionMismatch { .. } => "sa.theta0",
                _ => "sa",
            };
            return Err(config_err(key, err));
        }
        Ok(cfg)
    }
}

impl DppoSection {
    pub fn env(&self) -> Result<EchelonParams> {
        match self.echelons {
            1 => Ok(EchelonParams::single_echelon()),
            3 => Ok(EchelonParams::three_echelon()),
            n => Err(config_err("dppo.echelons", format!("supported chains have 1 or 3 echelons, got {n}"))),
        }
    }

    pub fn to_dppo_config(&self, sa: &SaSection) -> Result<DppoConfig> {
        if self.hidden == 0 {
            return Err(config_err("dppo.hidden", "must be positive"));
        }
        let env = self.env()?;
        let dim = drm_core::inventory::PolicySpec::new(env.feature_len(), self.hidden, env.echelons()).dim();
        let sa_cfg = sa.to_sa_config(dim)?;
        let mut cfg = DppoConfig::new(sa_cfg, env);
        cfg.policy.hidden = self.hidden;
        cfg.interval = self.interval;
        cfg.tolerance = self.tolerance;
        cfg.horizon = self.horizon;
        cfg.discount = self.discount;
        cfg.eval_episodes = self.eval_episodes;
        cfg.validate().map_err(|e| config_err("dppo", e))?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn portfolio(algorithm: Algorithm, distortion: &DistortionFn) -> Self {
        Self {
            task: Task::Portfolio,
            replications: 20,
            seed: 1,
            workers: 0,
            output: None,
            sa: SaSection::portfolio(algorithm, distortion),
            portfolio: PortfolioSection::default(),
            dppo: DppoSection::default(),
            tracker: TrackerSection::default(),
        }
    }

    pub fn dppo(distortion: &DistortionFn) -> Self {
        Self {
            task: Task::Dppo,
            sa: SaSection::dppo(distortion),
            ..Self::portfolio(Algorithm::Hybrid, distortion)
        }
    }

    pub fn tracker_bench() -> Self {
        Self {
            task: Task::TrackerBench,
            replications: 100,
            sa: SaSection::tracker(),
            ..Self::portfolio(Algorithm::Qf, &DistortionFn::identity())
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    /// Check every section the task uses before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(config_err("replications", "must be positive"));
        }
        if self.seed.checked_add(self.replications as u64).is_none() {
            return Err(config_err("seed", "seed + replications overflows"));
        }
        match self.task {
            Task::Portfolio => {
                let model = drm_core::model::parse_model(&self.portfolio.model).map_err(|e| config_err("portfolio.model", e))?;
                self.sa.to_sa_config(model.dim())?;
            }
            Task::Dppo => {
                if self.dppo.baseline_episodes == 0 {
                    return Err(config_err("dppo.baseline_episodes", "must be positive"));
                }
                self.dppo.to_dppo_config(&self.sa)?;
            }
            Task::TrackerBench => {
                let model = drm_core::model::parse_model(&self.tracker.model).map_err(|e| config_err("tracker.model", e))?;
                if self.tracker.theta.len() != model.dim() {
                    return Err(config_err(
                        "tracker.theta",
                        format!("model has dimension {}, got {} values", model.dim(), self.tracker.theta.len()),
                    ));
                }
                if !(self.tracker.level > 0.0 && self.tracker.level < 1.0) {
                    return Err(config_err("tracker.level", format!("must lie in (0, 1), got {}", self.tracker.level)));
                }
                if self.tracker.points < 2 {
                    return Err(config_err("tracker.points", "need at least 2 logging points"));
                }
                if !(self.sa.gamma_q0 > 0.0 && self.sa.beta > 0.0 && self.sa.beta <= 1.0) {
                    return Err(config_err("sa.beta", "need gamma_q0 > 0 and beta in (0, 1]"));
                }
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_toml(s)
    }
}
