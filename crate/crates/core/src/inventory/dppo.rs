//! Hybrid-form policy optimization on the episode return, reusing each
//! episode for up to `K0` iterations under an importance-sampling guard.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, rescore, rollout, within_tolerance, EchelonParams, PolicySpec, Trajectory};
use crate::error::{domain, DrmError, Result};
use crate::model::ModelSample;
use crate::optimizer::{run_rngs, Algorithm, Optimizer, SaConfig, SaState};

#[derive(Debug, Clone, PartialEq)]
pub struct DppoConfig {
    /// Trackers, schedules, grid, distortion and parameter box. Must use
    /// the hybrid algorithm; `total_iterations`, `seed`, `log_every` and
    /// `warmup` (in episodes) are taken from here.
    pub sa: SaConfig,
    pub env: EchelonParams,
    pub policy: PolicySpec,
    /// Sampling interval `K0`.
    pub interval: u64,
    /// IS tolerance `ε`.
    pub tolerance: f64,
    pub horizon: usize,
    pub discount: f64,
    /// Episodes used to score the final policy; 0 skips it.
    pub eval_episodes: usize,
}

impl DppoConfig {
    /// Defaults for a chain: hidden width 32, `K0 = 250`, `ε = 0.2`,
    /// horizon 100, `δ = 0.99`.
    pub fn new(sa: SaConfig, env: EchelonParams) -> Self {
        let policy = PolicySpec {
            action_offset: 10.0,
            action_scale: 5.0,
            init_log_std: 1.0,
            ..PolicySpec::new(env.feature_len(), 32, env.echelons())
        };
        Self {
            sa,
            env,
            policy,
            interval: 250,
            tolerance: 0.2,
            horizon: 100,
            discount: 0.99,
            eval_episodes: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sa.algorithm != Algorithm::Hybrid {
            return Err(DrmError::Config(format!("policy optimization uses the hybrid algorithm, got {}", self.sa.algorithm)));
        }
        if self.interval == 0 {
            return Err(DrmError::Config("interval must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(domain("tolerance", self.tolerance, "in (0, 1)"));
        }
        if self.horizon == 0 {
            return Err(domain("horizon", 0.0, ">= 1"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(domain("discount", self.discount, "in (0, 1]"));
        }
        if self.sa.warmup == 0 {
            return Err(DrmError::Config("warmup must be at least one episode".into()));
        }
        if self.policy.inputs != self.env.feature_len() || self.policy.outputs != self.env.echelons() {
            return Err(DrmError::Config("policy shape does not match the chain".into()));
        }
        Ok(())
    }
}

/// What one iteration did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Updated { rho: f64 },
    /// Ratio outside tolerance; nothing changed and a fresh episode is due.
    Skipped { rho: f64 },
}

/// One guarded iteration on an episode generated earlier. The score and
/// the IS ratio are evaluated at `state.theta`.
pub fn dppo_iteration(opt: &mut Optimizer, state: &mut SaState, policy: &PolicySpec, traj: &Trajectory, tolerance: f64) -> Result<Outcome> {
    let mut score = vec![0.0; state.theta.len()];
    let lp = rescore(policy, &state.theta, traj, &mut score)?;
    let lp_gen: f64 = traj.log_probs.iter().sum();
    let rho = (lp - lp_gen).exp();
    if !within_tolerance(rho, tolerance) {
        return Ok(Outcome::Skipped { rho });
    }
    let sample = ModelSample {
        x: Vec::new(),
        y: traj.ret,
        score,
    };
    opt.step_weighted(state, std::slice::from_ref(&sample), rho)?;
    Ok(Outcome::Updated { rho })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppoRecord {
    pub k: u64,
    /// Applied (not skipped) updates so far.
    pub updates: u64,
    pub episodes: u64,
    /// Episodes drawn because the ratio left the tolerance band.
    pub resamples: u64,
    /// Mean return of the episodes drawn since the previous record.
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DppoRun {
    pub records: Vec<DppoRecord>,
    pub theta: Vec<f64>,
    pub warmup_mean: f64,
    pub final_eval: Option<f64>,
}

impl DppoRun {
    /// CSV with header `k,updates,episodes,resamples,mean_return`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,updates,episodes,resamples,mean_return\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{:e}\n", r.k, r.updates, r.episodes, r.resamples, r.mean_return));
        }
        out
    }
}

/// Train from `cfg.sa.theta0`, or from a fresh network initialisation
/// projected into the box.
pub fn run_dppo(cfg: &DppoConfig) -> Result<DppoRun> {
    cfg.validate()?;
    let dim = cfg.policy.dim();
    let mut opt = Optimizer::new(cfg.sa.clone(), dim)?;
    let (mut rng, mut init_rng) = run_rngs(cfg.sa.seed);
    let mut theta = match &cfg.sa.theta0 {
        Some(t) => t.clone(),
        None => cfg.policy.init(&mut init_rng),
    };
    cfg.sa.bounds.project_in_place(&mut theta);

    let mut warm = Vec::with_capacity(cfg.sa.warmup);
    for _ in 0..cfg.sa.warmup {
        warm.push(rollout(&cfg.env, &cfg.policy, &theta, cfg.horizon, cfg.discount, &mut rng)?.ret);
    }
    let warmup_mean = warm.iter().sum::<f64>() / warm.len() as f64;
    let mut state = opt.init_state(theta, &warm)?;

    let mut records = Vec::new();
    let (mut updates, mut episodes, mut resamples) = (0u64, 0u64, 0u64);
    let (mut window_sum, mut window_n) = (0.0, 0u64);
    let mut traj: Option<Trajectory> = None;
    let mut resample = false;
    for k in 0..cfg.sa.total_iterations {
        if k % cfg.interval == 0 || resample || traj.is_none() {
            if resample && k % cfg.interval != 0 {
                resamples += 1;
            }
            let t = rollout(&cfg.env, &cfg.policy, &state.theta, cfg.horizon, cfg.discount, &mut rng)?;
            window_sum += t.ret;
            window_n += 1;
            episodes += 1;
            traj = Some(t);
            resample = false;
        }
        let t = traj.as_ref().expect("episode drawn above");
        match dppo_iteration(&mut opt, &mut state, &cfg.policy, t, cfg.tolerance)? {
            Outcome::Updated { .. } => updates += 1,
            Outcome::Skipped { .. } => resample = true,
        }
        let done = k + 1;
        if done % cfg.sa.log_every == 0 || done == cfg.sa.total_iterations {
            records.push(DppoRecord {
                k: done,
                updates,
                episodes,
                resamples,
                mean_return: if window_n > 0 { window_sum / window_n as f64 } else { f64::NAN },
            });
            window_sum = 0.0;
            window_n = 0;
        }
    }

    let final_eval = if cfg.eval_episodes > 0 {
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.sa.seed);
        eval_rng.set_stream(2);
        Some(evaluate(&cfg.env, &cfg.policy, &state.theta, cfg.horizon, cfg.discount, cfg.eval_episodes, &mut eval_rng)?)
    } else {
        None
    };
    Ok(DppoRun {
        records,
        theta: state.theta,
        warmup_mean,
        final_eval,
    })
}
