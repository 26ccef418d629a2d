//! Multi-timescale stochastic approximation for DRM maximisation.
//!
//! Three coupled recursions run per iteration: quantile trackers, and for
//! the distortion-measure form, quantile-gradient trackers, both feeding a
//! projected ascent step on θ.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distortion::{jump_partition, weights, DistortionFn, Grid};
use crate::error::{domain, DrmError, Result};
use crate::estimators::{sort_clip_in_place, KernelSpec};
use crate::model::{ModelSample, ObservableModel};
use crate::oracle::{drm_from_values, wasserstein2, QuantileFn};

/// `a / max(k0 + k, 1)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub a: f64,
    pub k0: f64,
    pub exponent: f64,
}

impl Schedule {
    pub fn new(a: f64, k0: f64, exponent: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(domain("schedule constant", a, "> 0"));
        }
        if !(k0 >= 0.0 && k0.is_finite()) {
            return Err(domain("k0", k0, ">= 0"));
        }
        if !(exponent > 0.0 && exponent <= 1.0) {
            return Err(domain("schedule exponent", exponent, "(0, 1]"));
        }
        Ok(Self { a, k0, exponent })
    }

    /// Schedule whose value at `k = 0` is `initial`.
    pub fn from_initial(initial: f64, k0: f64, exponent: f64) -> Result<Self> {
        Self::new(initial * k0.max(1.0).powf(exponent), k0, exponent)
    }

    #[inline]
    pub fn value(&self, k: u64) -> f64 {
        self.a / (self.k0 + k as f64).max(1.0).powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Self {
            alpha: 0.70,
            beta: 0.71,
            gamma: 0.99,
            eta: 0.14,
        }
    }
}

/// Step sizes for D, q and θ plus the kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub d: Schedule,
    pub q: Schedule,
    pub theta: Schedule,
    pub h: Schedule,
}

impl Schedules {
    pub fn from_initial(k0: f64, d0: f64, q0: f64, theta0: f64, h0: f64, e: Exponents) -> Result<Self> {
        Ok(Self {
            d: Schedule::from_initial(d0, k0, e.alpha)?,
            q: Schedule::from_initial(q0, k0, e.beta)?,
            theta: Schedule::from_initial(theta0, k0, e.gamma)?,
            h: Schedule::from_initial(h0, k0, e.eta)?,
        })
    }

    /// The four exponents.
    pub fn exponents(&self) -> Exponents {
        Exponents {
            alpha: self.d.exponent,
            beta: self.q.exponent,
            gamma: self.theta.exponent,
            eta: self.h.exponent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Dm,
    Qf,
    Hybrid,
    Batching,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Dm, Algorithm::Qf, Algorithm::Hybrid, Algorithm::Batching];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dm => "dm",
            Algorithm::Qf => "qf",
            Algorithm::Hybrid => "hybrid",
            Algorithm::Batching => "batching",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = DrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dm" => Ok(Algorithm::Dm),
            "qf" => Ok(Algorithm::Qf),
            "hybrid" => Ok(Algorithm::Hybrid),
            "batching" => Ok(Algorithm::Batching),
            _ => Err(DrmError::Parse {
                what: "algorithm",
                input: s.to_string(),
                reason: "expected dm, qf, hybrid or batching".into(),
            }),
        }
    }
}

/// Product of closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(DrmError::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(DrmError::Config(format!("invalid box interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[−r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Result<Self> {
        Self::new(vec![-r; dim], vec![r; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *l <= *t && *t <= *u)
    }

    pub fn project_in_place(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }

    pub fn uniform_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l < u { rng.random_range(*l..=*u) } else { *l })
            .collect()
    }
}

/// Per-coordinate clamp onto the box.
pub fn project(theta: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    let mut out = theta.to_vec();
    bounds.project_in_place(&mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaConfig {
    pub algorithm: Algorithm,
    pub grid: Grid,
    pub distortion: DistortionFn,
    pub schedules: Schedules,
    pub bounds: BoxBounds,
    pub batch_size: usize,
    pub total_iterations: u64,
    pub seed: u64,
    pub log_every: u64,
    /// Gap floor for the clipped quantile view in the QF terms; 0 sorts only.
    pub lq: f64,
    /// Replace `1{y ≤ q_i}` by `1{y ≤ q_i} − z_i` in every score term.
    /// The mean is unchanged since the score has mean zero.
    pub centered: bool,
    pub kernel: KernelSpec,
    /// Warm-up draws used to initialise the quantile trackers.
    pub warmup: usize,
    /// Start point; drawn uniformly from the box when absent.
    pub theta0: Option<Vec<f64>>,
    /// Keep θ fixed and run only the trackers.
    pub freeze_theta: bool,
    /// Midpoint-rule resolution of the logged W2 distance.
    pub w2_resolution: usize,
}

impl SaConfig {
    pub fn new(algorithm: Algorithm, grid: Grid, distortion: DistortionFn, schedules: Schedules, bounds: BoxBounds) -> Self {
        Self {
            algorithm,
            grid,
            distortion,
            schedules,
            bounds,
            batch_size: 1,
            total_iterations: 0,
            seed: 0,
            log_every: 500,
            lq: 0.0,
            centered: false,
            kernel: KernelSpec::Gaussian,
            warmup: 256,
            theta0: None,
            freeze_theta: false,
            w2_resolution: 1000,
        }
    }

    /// Check the configuration against a model of dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.bounds.dim() != dim {
            return Err(DrmError::DimensionMismatch {
                context: "box bounds vs model",
                expected: dim,
                actual: self.bounds.dim(),
            });
        }
        if let Some(t) = &self.theta0 {
            if t.len() != dim {
                return Err(DrmError::DimensionMismatch {
                    context: "theta0",
                    expected: dim,
                    actual: t.len(),
                });
            }
            if !self.bounds.contains(t) {
                return Err(DrmError::Config("theta0 lies outside the box".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(DrmError::Config("batch_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(DrmError::Config("log_every must be positive".into()));
        }
        if !(self.lq >= 0.0 && self.lq.is_finite()) {
            return Err(DrmError::Config(format!("lq must be nonnegative, got {}", self.lq)));
        }
        if self.w2_resolution < 2 {
            return Err(DrmError::Config("w2_resolution must be at least 2".into()));
        }
        let (jump, _) = jump_partition(&self.distortion, &self.grid);
        let e = self.schedules.exponents();
        let needs_d = match self.algorithm {
            Algorithm::Dm => true,
            Algorithm::Hybrid => !jump.is_empty(),
            Algorithm::Qf | Algorithm::Batching => false,
        };
        if needs_d {
            if !(0.5 < e.alpha && e.alpha < e.beta && e.beta < e.gamma && e.gamma <= 1.0) {
                return Err(DrmError::Config(format!(
                    "timescale ordering requires 1/2 < alpha < beta < gamma <= 1, got {}, {}, {}",
                    e.alpha, e.beta, e.gamma
                )));
            }
            if !(e.eta < 2.0 * e.alpha - 1.0) {
                return Err(DrmError::Config(format!(
                    "bandwidth exponent eta = {} must be below 2 alpha - 1 = {}",
                    e.eta,
                    2.0 * e.alpha - 1.0
                )));
            }
        }
        if matches!(self.algorithm, Algorithm::Qf | Algorithm::Hybrid)
            && !(0.5 < e.beta && e.beta < e.gamma && e.gamma <= 1.0)
        {
            return Err(DrmError::Config(format!(
                "timescale ordering requires 1/2 < beta < gamma <= 1, got {}, {}",
                e.beta, e.gamma
            )));
        }
        if matches!(self.algorithm, Algorithm::Qf | Algorithm::Batching) {
            if let Some(&i) = jump.first() {
                return Err(DrmError::NonDifferentiable {
                    kind: self.distortion.to_string(),
                    z: 1.0 - self.grid.levels()[i],
                });
            }
            for &z in self.grid.eval_points() {
                self.distortion.reflected_derivative(z)?;
            }
        }
        Ok(())
    }
}

/// Tracker and parameter state of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SaState {
    pub k: u64,
    pub theta: Vec<f64>,
    /// Quantile estimates at the grid levels `z_0..z_N` (QF and Hybrid).
    pub q_levels: Vec<f64>,
    /// Quantile estimates at the evaluation points of the tracked rows.
    pub q_rows: Vec<f64>,
    /// Quantile-gradient estimates, row-major `rows × dim`.
    pub d: Vec<f64>,
}

/// Precomputed per-configuration quantities shared across iterations.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: SaConfig,
    dim: usize,
    /// `Δw̃_i` for `i = 1..N`.
    dw: Vec<f64>,
    /// `w′(1 − z̃_i)` on smooth intervals, 0 elsewhere.
    wprime: Vec<f64>,
    /// 1-based interval indices carrying a D row.
    rows: Vec<usize>,
    smooth: Vec<usize>,
    // scratch
    qview: Vec<f64>,
    grad: Vec<f64>,
    g1: Vec<f64>,
    ys: Vec<f64>,
}

impl Optimizer {
    pub fn new(cfg: SaConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        let n = cfg.grid.n_intervals();
        let dw = weights(&cfg.distortion, &cfg.grid);
        let (jump, smooth) = jump_partition(&cfg.distortion, &cfg.grid);
        let rows = match cfg.algorithm {
            Algorithm::Dm => (1..=n).collect(),
            Algorithm::Hybrid => jump,
            Algorithm::Qf | Algorithm::Batching => Vec::new(),
        };
        let smooth = match cfg.algorithm {
            Algorithm::Dm => Vec::new(),
            _ => smooth,
        };
        let mut wprime = vec![0.0; n];
        for &i in &smooth {
            wprime[i - 1] = cfg.distortion.reflected_derivative(cfg.grid.eval_points()[i - 1])?;
        }
        Ok(Self {
            qview: Vec::with_capacity(n + 1),
            grad: vec![0.0; dim],
            g1: vec![0.0; dim],
            ys: Vec::new(),
            cfg,
            dim,
            dw,
            wprime,
            rows,
            smooth,
        })
    }

    pub fn config(&self) -> &SaConfig {
        &self.cfg
    }

    /// 1-based interval indices with a D row.
    pub fn tracked_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn uses_levels(&self) -> bool {
        matches!(self.cfg.algorithm, Algorithm::Qf | Algorithm::Hybrid)
    }

    /// State at `theta` with trackers warm-started from `warm` (draws at `theta`).
    pub fn init_state(&self, theta: Vec<f64>, warm: &[f64]) -> Result<SaState> {
        if warm.is_empty() {
            return Err(DrmError::InsufficientData { needed: 1, got: 0 });
        }
        let mut sorted = warm.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pts = self.cfg.grid.eval_points();
        let q_levels = if self.uses_levels() {
            self.cfg.grid.levels().iter().map(|&z| empirical_quantile(&sorted, z)).collect()
        } else {
            Vec::new()
        };
        let q_rows = self.rows.iter().map(|&i| empirical_quantile(&sorted, pts[i - 1])).collect();
        Ok(SaState {
            k: 0,
            theta,
            q_levels,
            q_rows,
            d: vec![0.0; self.rows.len() * self.dim],
        })
    }

    /// One iteration on a batch drawn at `state.theta`, with every tracker
    /// correction and the QF term weighted by `rho`.
    pub fn step_weighted(&mut self, state: &mut SaState, batch: &[ModelSample], rho: f64) -> Result<()> {
        if batch.is_empty() {
            return Err(DrmError::InsufficientData { needed: 1, got: 0 });
        }
        if let Some(s) = batch.iter().find(|s| s.score.len() != self.dim) {
            return Err(DrmError::DimensionMismatch {
                context: "sample score",
                expected: self.dim,
                actual: s.score.len(),
            });
        }
        if state.theta.len() != self.dim {
            return Err(DrmError::DimensionMismatch {
                context: "theta",
                expected: self.dim,
                actual: state.theta.len(),
            });
        }
        let k = state.k;
        let s = &self.cfg.schedules;
        let (gd, gq, gt, h) = (s.d.value(k), s.q.value(k), s.theta.value(k), s.h.value(k));
        let inv_b = 1.0 / batch.len() as f64;
        self.grad.iter_mut().for_each(|g| *g = 0.0);

        match self.cfg.algorithm {
            Algorithm::Dm => {
                // θ direction from the pre-update D
                for (r, &i) in self.rows.iter().enumerate() {
                    let w = self.dw[i - 1];
                    let row = &state.d[r * self.dim..(r + 1) * self.dim];
                    for (g, d) in self.grad.iter_mut().zip(row) {
                        *g -= d * w;
                    }
                }
                self.update_rows(state, batch, gd, gq, h, rho, inv_b);
            }
            Algorithm::Qf => {
                self.qf_direction(&state.q_levels, batch, rho, inv_b);
                update_levels(&self.cfg.grid, &mut state.q_levels, batch, gq, rho, inv_b);
            }
            Algorithm::Hybrid => {
                self.qf_direction(&state.q_levels, batch, rho, inv_b);
                update_levels(&self.cfg.grid, &mut state.q_levels, batch, gq, rho, inv_b);
                if !self.rows.is_empty() {
                    self.update_rows(state, batch, gd, gq, h, rho, inv_b);
                    // g^DM from the post-update D
                    for (r, &i) in self.rows.iter().enumerate() {
                        let w = self.dw[i - 1];
                        let row = &state.d[r * self.dim..(r + 1) * self.dim];
                        for (g, d) in self.grad.iter_mut().zip(row) {
                            *g -= d * w;
                        }
                    }
                }
            }
            Algorithm::Batching => {
                self.ys.clear();
                self.ys.extend(batch.iter().map(|s| s.y));
                self.ys.sort_by(f64::total_cmp);
                let mut q = std::mem::take(&mut self.qview);
                q.clear();
                q.extend(self.cfg.grid.levels().iter().map(|&z| empirical_quantile(&self.ys, z)));
                self.qf_direction_on(&q, batch, rho, inv_b);
                self.qview = q;
            }
        }

        if let Some(j) = self.grad.iter().position(|g| !g.is_finite()) {
            return Err(DrmError::NonFinite {
                iteration: k,
                detail: format!("theta direction component {j} is {}", self.grad[j]),
            });
        }
        if let Some(v) = state.q_levels.iter().chain(&state.q_rows).find(|v| !v.is_finite()) {
            return Err(DrmError::NonFinite {
                iteration: k,
                detail: format!("quantile estimate is {v}"),
            });
        }
        if let Some(v) = state.d.iter().find(|v| !v.is_finite()) {
            return Err(DrmError::NonFinite {
                iteration: k,
                detail: format!("quantile gradient estimate is {v}"),
            });
        }
        if !self.cfg.freeze_theta {
            for (t, g) in state.theta.iter_mut().zip(&self.grad) {
                *t += gt * g;
            }
            self.cfg.bounds.project_in_place(&mut state.theta);
        }
        state.k += 1;
        Ok(())
    }

    pub fn step(&mut self, state: &mut SaState, batch: &[ModelSample]) -> Result<()> {
        self.step_weighted(state, batch, 1.0)
    }

    /// Last computed (unscaled) ascent direction.
    pub fn direction(&self) -> &[f64] {
        &self.grad
    }

    #[allow(clippy::too_many_arguments)]
    fn update_rows(&mut self, state: &mut SaState, batch: &[ModelSample], gd: f64, gq: f64, h: f64, rho: f64, inv_b: f64) {
        let pts = self.cfg.grid.eval_points();
        let kernel = self.cfg.kernel;
        let c = gd * rho;
        for (r, &i) in self.rows.iter().enumerate() {
            let q = state.q_rows[r];
            self.g1.iter_mut().for_each(|g| *g = 0.0);
            let mut g3 = 0.0;
            let mut below = 0.0;
            let shift = if self.cfg.centered { pts[i - 1] } else { 0.0 };
            for s in batch {
                let ind = if s.y <= q { 1.0 } else { 0.0 };
                below += ind;
                let c = ind - shift;
                if c != 0.0 {
                    for (g, sc) in self.g1.iter_mut().zip(&s.score) {
                        *g -= c * sc;
                    }
                }
                g3 += kernel.density(s.y, q, h);
            }
            g3 *= inv_b;
            let row = &mut state.d[r * self.dim..(r + 1) * self.dim];
            for (d, g) in row.iter_mut().zip(&self.g1) {
                *d += c * (g * inv_b - g3 * *d);
            }
            state.q_rows[r] = q + gq * (pts[i - 1] - rho * below * inv_b);
        }
    }

    fn qf_direction(&mut self, q_levels: &[f64], batch: &[ModelSample], rho: f64, inv_b: f64) {
        let mut q = std::mem::take(&mut self.qview);
        q.clear();
        q.extend_from_slice(q_levels);
        sort_clip_in_place(&mut q, self.cfg.grid.levels(), self.cfg.lq);
        self.qf_direction_on(&q, batch, rho, inv_b);
        self.qview = q;
    }

    /// Accumulate `ρ · mean_b Σ_smooth G1(q_i) w′(1 − z̃_i)(q_i − q_{i−1})`.
    fn qf_direction_on(&mut self, q: &[f64], batch: &[ModelSample], rho: f64, inv_b: f64) {
        let levels = self.cfg.grid.levels();
        for s in batch {
            let mut weight = 0.0;
            for &i in &self.smooth {
                let ind = if s.y <= q[i] { 1.0 } else { 0.0 };
                let c = if self.cfg.centered { ind - levels[i] } else { ind };
                if c != 0.0 {
                    weight += c * self.wprime[i - 1] * (q[i] - q[i - 1]);
                }
            }
            if weight != 0.0 {
                let c = rho * inv_b * weight;
                for (g, sc) in self.grad.iter_mut().zip(&s.score) {
                    *g -= c * sc;
                }
            }
        }
    }
}

fn update_levels(grid: &Grid, q: &mut [f64], batch: &[ModelSample], gq: f64, rho: f64, inv_b: f64) {
    for (qi, &z) in q.iter_mut().zip(grid.levels()) {
        let below = batch.iter().filter(|s| s.y <= *qi).count() as f64;
        *qi += gq * (z - rho * below * inv_b);
    }
}

/// Order statistic `⌈z·n⌉` (1-based) of sorted data.
pub fn empirical_quantile(sorted: &[f64], z: f64) -> f64 {
    let n = sorted.len();
    let idx = ((z * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

fn single_step(algorithm: Algorithm, state: &mut SaState, batch: &[ModelSample], cfg: &SaConfig) -> Result<()> {
    if cfg.algorithm != algorithm {
        return Err(DrmError::Config(format!(
            "{} step called with a {} configuration",
            algorithm, cfg.algorithm
        )));
    }
    let mut opt = Optimizer::new(cfg.clone(), state.theta.len())?;
    opt.step(state, batch)
}

/// Distortion-measure form step (pre-update D in the θ direction).
pub fn dm_step(state: &mut SaState, sample: &ModelSample, cfg: &SaConfig) -> Result<()> {
    single_step(Algorithm::Dm, state, std::slice::from_ref(sample), cfg)
}

/// Quantile-function form step (pre-update q in the θ direction).
pub fn qf_step(state: &mut SaState, sample: &ModelSample, cfg: &SaConfig) -> Result<()> {
    single_step(Algorithm::Qf, state, std::slice::from_ref(sample), cfg)
}

/// Hybrid step: quantile-function form on smooth intervals, distortion
/// form (post-update D) on intervals that absorb a jump.
pub fn hybrid_step(state: &mut SaState, sample: &ModelSample, cfg: &SaConfig) -> Result<()> {
    single_step(Algorithm::Hybrid, state, std::slice::from_ref(sample), cfg)
}

/// Single-timescale step with empirical batch quantiles in place of trackers.
pub fn batching_step(state: &mut SaState, batch: &[ModelSample], cfg: &SaConfig) -> Result<()> {
    single_step(Algorithm::Batching, state, batch, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub k: u64,
    pub theta: Vec<f64>,
    pub drm: f64,
    pub w2: Option<f64>,
    /// Wall-clock milliseconds since the start of the run.
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<Record>,
}

impl RunHistory {
    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    pub fn final_w2(&self) -> Option<f64> {
        self.last().and_then(|r| r.w2)
    }

    /// CSV with header `k,theta_0..theta_{d-1},drm,w2,ms`.
    pub fn to_csv(&self, include_ms: bool) -> String {
        let dim = self.records.first().map_or(0, |r| r.theta.len());
        let mut out = String::from("k");
        for j in 0..dim {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push_str(",drm,w2");
        if include_ms {
            out.push_str(",ms");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.k.to_string());
            for t in &r.theta {
                out.push_str(&format!(",{t:e}"));
            }
            out.push_str(&format!(",{:e},", r.drm));
            if let Some(w) = r.w2 {
                out.push_str(&format!("{w:e}"));
            }
            if include_ms {
                out.push_str(&format!(",{:.3}", r.ms));
            }
            out.push('\n');
        }
        out
    }
}

/// Generator for a run: stream 0 feeds samples, stream 1 the start point.
pub fn run_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let main = ChaCha8Rng::seed_from_u64(seed);
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(1);
    (main, init)
}

pub fn run(cfg: &SaConfig, model: &dyn ObservableModel) -> Result<RunHistory> {
    run_with_reference(cfg, model, None)
}

/// Run `cfg.total_iterations` iterations, logging every `cfg.log_every`
/// and at the end. W2 is logged against `reference` when given and the
/// model has a closed-form law.
pub fn run_with_reference(cfg: &SaConfig, model: &dyn ObservableModel, reference: Option<&dyn QuantileFn>) -> Result<RunHistory> {
    let start = Instant::now();
    let dim = model.dim();
    let mut opt = Optimizer::new(cfg.clone(), dim)?;
    let (mut rng, mut init_rng) = run_rngs(cfg.seed);
    let theta0 = match &cfg.theta0 {
        Some(t) => t.clone(),
        None => cfg.bounds.uniform_point(&mut init_rng),
    };
    model.validate(&theta0)?;
    let mut warm = Vec::with_capacity(cfg.warmup.max(1));
    model.sample_batch(&theta0, cfg.warmup.max(1), &mut rng, &mut warm);
    let ys: Vec<f64> = warm.iter().map(|s| s.y).collect();
    let mut state = opt.init_state(theta0, &ys)?;

    let mut history = RunHistory::default();
    let record = |state: &SaState, history: &mut RunHistory| -> Result<()> {
        let (drm, w2) = match model.law(&state.theta) {
            Some(law) => {
                let vals = law.quantiles(cfg.grid.eval_points());
                let drm = drm_from_values(&vals, &cfg.distortion, &cfg.grid);
                let w2 = match reference {
                    Some(r) => Some(wasserstein2(law.as_ref(), r, cfg.w2_resolution)?),
                    None => None,
                };
                (drm, w2)
            }
            None => (f64::NAN, None),
        };
        history.records.push(Record {
            k: state.k,
            theta: state.theta.clone(),
            drm,
            w2,
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    };
    record(&state, &mut history)?;

    let mut batch = Vec::with_capacity(cfg.batch_size);
    while state.k < cfg.total_iterations {
        batch.clear();
        model.sample_batch(&state.theta, cfg.batch_size, &mut rng, &mut batch);
        opt.step(&mut state, &batch)?;
        if state.k % cfg.log_every == 0 || state.k == cfg.total_iterations {
            record(&state, &mut history)?;
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussLocation, QuadraticLoss};
    use crate::normal;
    use proptest::prelude::*;

    fn schedules(k0: f64) -> Schedules {
        Schedules::from_initial(k0, 0.1, 0.25, 0.1, 0.2, Exponents::default()).unwrap()
    }

    fn mean_cfg(alg: Algorithm) -> SaConfig {
        let mut cfg = SaConfig::new(
            alg,
            Grid::uniform(20).unwrap(),
            DistortionFn::identity(),
            schedules(100.0),
            BoxBounds::symmetric(1, 2.5).unwrap(),
        );
        cfg.theta0 = Some(vec![2.0]);
        cfg
    }

    fn sample(y: f64, score: Vec<f64>) -> ModelSample {
        ModelSample { x: vec![y], y, score }
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::new(2.0, 0.0, 0.5).unwrap();
        assert_eq!(s.value(4), 1.0);
        assert_eq!(s.value(0), 2.0);
        let s = Schedule::from_initial(0.25, 500.0, 0.71).unwrap();
        assert!((s.value(0) - 0.25).abs() < 1e-15);
        assert!(s.value(10) < s.value(9));
        assert!(Schedule::new(0.0, 1.0, 0.5).is_err());
        assert!(Schedule::new(1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn projection_examples() {
        let b = BoxBounds::symmetric(2, 2.5).unwrap();
        assert_eq!(project(&[0.3, -1.0], &b), vec![0.3, -1.0]);
        assert_eq!(project(&[3.0, -3.0], &b), vec![2.5, -2.5]);
        assert_eq!(project(&[2.5, -2.5], &b), vec![2.5, -2.5]);
    }

    #[test]
    fn algorithm_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn validation_rules() {
        let base = mean_cfg(Algorithm::Dm);
        assert!(base.validate(1).is_ok());
        assert!(base.validate(2).is_err());

        let mut bad = base.clone();
        bad.schedules = Schedules::from_initial(
            100.0,
            0.1,
            0.1,
            0.1,
            0.1,
            Exponents {
                alpha: 0.75,
                beta: 0.71,
                ..Exponents::default()
            },
        )
        .unwrap();
        assert!(matches!(bad.validate(1), Err(DrmError::Config(_))));
        let mut bad = base.clone();
        bad.schedules = Schedules::from_initial(
            100.0,
            0.1,
            0.1,
            0.1,
            0.1,
            Exponents {
                eta: 0.5,
                ..Exponents::default()
            },
        )
        .unwrap();
        assert!(bad.validate(1).is_err());

        let mut qf = mean_cfg(Algorithm::Qf);
        qf.distortion = DistortionFn::discontinuous(5.0).unwrap();
        qf.grid = Grid::uniform(98).unwrap();
        assert!(matches!(qf.validate(1), Err(DrmError::NonDifferentiable { .. })));
        qf.algorithm = Algorithm::Hybrid;
        assert!(qf.validate(1).is_ok());
        qf.algorithm = Algorithm::Dm;
        assert!(qf.validate(1).is_ok());

        let mut outside = mean_cfg(Algorithm::Qf);
        outside.theta0 = Some(vec![3.0]);
        assert!(outside.validate(1).is_err());
    }

    #[test]
    fn flat_weights_leave_theta_unchanged() {
        // the only jump of w lies outside the grid, so every weight vanishes
        let w = DistortionFn::var(0.01).unwrap();
        let mut cfg = mean_cfg(Algorithm::Dm);
        cfg.distortion = w;
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let mut state = opt.init_state(vec![0.5], &[0.0, 1.0, -1.0]).unwrap();
        state.d.iter_mut().for_each(|d| *d = 1.0);
        let before = state.theta.clone();
        opt.step(&mut state, &[sample(0.2, vec![1.0])]).unwrap();
        assert_eq!(state.theta, before);
    }

    #[test]
    fn single_point_dm_direction() {
        let grid = Grid::new(vec![0.8, 0.9], Default::default()).unwrap();
        let mut cfg = SaConfig::new(
            Algorithm::Dm,
            grid,
            DistortionFn::cvar(0.7).unwrap(),
            schedules(10.0),
            BoxBounds::symmetric(1, 10.0).unwrap(),
        );
        cfg.theta0 = Some(vec![0.0]);
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let mut state = opt.init_state(vec![0.0], &[0.0]).unwrap();
        state.d[0] = 0.8;
        opt.step(&mut state, &[sample(5.0, vec![0.0])]).unwrap();
        let dw = opt.dw[0];
        assert!(dw < 0.0);
        assert_eq!(state.theta[0].signum(), (-0.8 * dw).signum());
    }

    #[test]
    fn qf_zero_indicator_and_equal_quantiles() {
        let cfg = mean_cfg(Algorithm::Qf);
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let warm: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let mut state = opt.init_state(vec![1.0], &warm).unwrap();
        opt.step(&mut state, &[sample(1e6, vec![3.0])]).unwrap();
        assert_eq!(state.theta, vec![1.0]);

        let mut state = opt.init_state(vec![1.0], &[0.5]).unwrap();
        opt.step(&mut state, &[sample(-1.0, vec![3.0])]).unwrap();
        assert_eq!(state.theta, vec![1.0]);
    }

    #[test]
    fn centered_shift_is_a_fixed_score_multiple() {
        // centering subtracts score · Σ z_i w′ Δq_i, which does not depend on y
        let warm: Vec<f64> = (0..50).map(|i| (i as f64 / 7.0).sin()).collect();
        for y in [-2.0, 0.1, 0.4, 3.0] {
            let mut dirs = Vec::new();
            for centered in [false, true] {
                let mut cfg = mean_cfg(Algorithm::Qf);
                cfg.centered = centered;
                let mut opt = Optimizer::new(cfg.clone(), 1).unwrap();
                let mut state = opt.init_state(vec![0.0], &warm).unwrap();
                opt.step(&mut state, &[sample(y, vec![1.0])]).unwrap();
                let mut sorted = warm.clone();
                sorted.sort_by(f64::total_cmp);
                let q: Vec<f64> = cfg.grid.levels().iter().map(|&z| empirical_quantile(&sorted, z)).collect();
                let shift: f64 = (1..q.len()).map(|i| cfg.grid.levels()[i] * (q[i] - q[i - 1])).sum();
                dirs.push((opt.direction()[0], shift));
            }
            let (plain, shift) = dirs[0];
            assert!((dirs[1].0 - (plain + shift)).abs() < 1e-12);
        }
    }

    #[test]
    fn batching_examples() {
        let cfg = mean_cfg(Algorithm::Batching);
        let mut opt = Optimizer::new(cfg.clone(), 1).unwrap();
        let mut state = opt.init_state(vec![1.0], &[0.0]).unwrap();
        let batch: Vec<_> = (0..4).map(|_| sample(2.0, vec![1.5])).collect();
        opt.step(&mut state, &batch).unwrap();
        assert_eq!(state.theta, vec![1.0]);
        assert!(batching_step(&mut state, &batch, &cfg).is_ok());
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.01), 1.0);
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.99), 4.0);
    }

    #[test]
    fn step_wrappers_check_algorithm() {
        let cfg = mean_cfg(Algorithm::Qf);
        let opt = Optimizer::new(cfg.clone(), 1).unwrap();
        let mut state = opt.init_state(vec![0.0], &[0.0, 1.0]).unwrap();
        let s = sample(0.1, vec![0.1]);
        assert!(qf_step(&mut state, &s, &cfg).is_ok());
        assert!(dm_step(&mut state, &s, &cfg).is_err());
        assert!(hybrid_step(&mut state, &s, &cfg).is_err());
        assert_eq!(state.k, 1);
    }

    #[test]
    fn non_finite_update_aborts() {
        let cfg = mean_cfg(Algorithm::Qf);
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let warm: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let mut state = opt.init_state(vec![0.0], &warm).unwrap();
        let err = opt.step(&mut state, &[sample(0.0, vec![f64::INFINITY])]).unwrap_err();
        assert!(matches!(err, DrmError::NonFinite { iteration: 0, .. }));
    }

    #[test]
    fn stationary_when_direction_vanishes() {
        // two rows whose weighted D contributions cancel
        let mut cfg = mean_cfg(Algorithm::Dm);
        cfg.grid = Grid::new(vec![0.25, 0.5, 0.75], Default::default()).unwrap();
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let mut state = opt.init_state(vec![0.3], &[0.0]).unwrap();
        let (w1, w2) = (opt.dw[0], opt.dw[1]);
        state.d[0] = w2;
        state.d[1] = -w1;
        opt.step(&mut state, &[sample(0.0, vec![1.0])]).unwrap();
        assert_eq!(state.theta, vec![0.3]);
    }

    #[test]
    fn zero_iterations_records_initial_state() {
        let mut cfg = mean_cfg(Algorithm::Qf);
        cfg.total_iterations = 0;
        let h = run(&cfg, &GaussLocation).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].k, 0);
        assert_eq!(h.records[0].theta, vec![2.0]);
    }

    fn mean_run(alg: Algorithm, seed: u64) -> f64 {
        let mut cfg = mean_cfg(alg);
        cfg.total_iterations = 100_000;
        cfg.log_every = 100_000;
        cfg.seed = seed;
        let h = run(&cfg, &GaussLocation).unwrap();
        h.last().unwrap().theta[0]
    }

    #[test]
    fn mean_maximisation_reaches_box_edge() {
        for alg in [Algorithm::Dm, Algorithm::Qf, Algorithm::Hybrid] {
            let t = mean_run(alg, 3);
            assert!((t - 2.5).abs() < 0.05, "{alg}: {t}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = mean_cfg(Algorithm::Dm);
        cfg.total_iterations = 2000;
        cfg.log_every = 100;
        cfg.seed = 9;
        let reference = |z: f64| normal::quantile(z);
        let a = run_with_reference(&cfg, &GaussLocation, Some(&reference)).unwrap();
        let b = run_with_reference(&cfg, &GaussLocation, Some(&reference)).unwrap();
        assert_eq!(a.to_csv(false), b.to_csv(false));
        assert_eq!(a.records.len(), 21);
        assert!(a.records.windows(2).all(|p| p[1].k > p[0].k));
        assert!(a.to_csv(true).starts_with("k,theta_0,drm,w2,ms\n"));
    }

    #[test]
    fn hybrid_matches_qf_bitwise_on_smooth_distortion() {
        let mut cfg = mean_cfg(Algorithm::Qf);
        cfg.distortion = DistortionFn::wang(-0.85).unwrap();
        cfg.total_iterations = 5000;
        cfg.log_every = 1;
        cfg.theta0 = None;
        cfg.seed = 4;
        let qf = run(&cfg, &GaussLocation).unwrap();
        cfg.algorithm = Algorithm::Hybrid;
        let hy = run(&cfg, &GaussLocation).unwrap();
        for (a, b) in qf.records.iter().zip(&hy.records) {
            assert_eq!(a.theta[0].to_bits(), b.theta[0].to_bits());
        }
    }

    #[test]
    fn tracked_rows_for_discontinuous_hybrid() {
        let mut cfg = mean_cfg(Algorithm::Hybrid);
        cfg.grid = Grid::uniform(98).unwrap();
        cfg.distortion = DistortionFn::discontinuous(5.0).unwrap();
        let opt = Optimizer::new(cfg.clone(), 1).unwrap();
        assert_eq!(opt.tracked_rows().len(), 3);
        let state = opt.init_state(vec![0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(state.d.len(), 3);
        cfg.algorithm = Algorithm::Dm;
        assert_eq!(Optimizer::new(cfg, 1).unwrap().tracked_rows().len(), 98);
    }

    #[test]
    fn qf_rate_on_quadratic_objective() {
        // maximiser θ* = 0.5 in the interior
        let model = QuadraticLoss { center: 0.5 };
        let mut cfg = SaConfig::new(
            Algorithm::Qf,
            Grid::uniform(20).unwrap(),
            DistortionFn::identity(),
            Schedules::from_initial(
                100.0,
                0.1,
                0.5,
                0.5,
                0.1,
                Exponents {
                    alpha: 0.55,
                    beta: 0.6,
                    gamma: 0.75,
                    eta: 0.05,
                },
            )
            .unwrap(),
            BoxBounds::symmetric(1, 2.5).unwrap(),
        );
        cfg.theta0 = Some(vec![-1.5]);
        cfg.total_iterations = 100_000;
        cfg.log_every = 1000;
        let reps = 20;
        let mut mse = vec![0.0; 101];
        for r in 0..reps {
            cfg.seed = 50 + r;
            let h = run(&cfg, &model).unwrap();
            for (slot, rec) in mse.iter_mut().zip(&h.records) {
                *slot += (rec.theta[0] - 0.5).powi(2) / reps as f64;
            }
        }
        let pts: Vec<(f64, f64)> = (10..=100).map(|i| ((i as f64 * 1000.0).ln(), mse[i].ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((-0.9..=-0.4).contains(&slope), "slope {slope}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn iterates_stay_in_box(seed in 0u64..1000, alg in 0usize..4) {
            let mut cfg = mean_cfg(Algorithm::ALL[alg]);
            cfg.batch_size = 4;
            cfg.total_iterations = 300;
            cfg.log_every = 1;
            cfg.seed = seed;
            cfg.schedules = Schedules::from_initial(10.0, 0.5, 0.5, 5.0, 0.3, Exponents::default()).unwrap();
            let h = run(&cfg, &GaussLocation).unwrap();
            for r in &h.records {
                prop_assert!(cfg.bounds.contains(&r.theta));
            }
        }
    }
}
