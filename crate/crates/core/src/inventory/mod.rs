//! Multi-echelon inventory control with a Gaussian policy, and policy
//! optimization of a distortion risk measure of the episode return.

pub mod dppo;
pub mod env;
pub mod policy;

use rand::Rng;

use crate::error::{domain, DrmError, Result};
pub use env::{env_step, EchelonParams, InventoryState};
pub use policy::PolicySpec;

/// One simulated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Policy input at each period.
    pub observations: Vec<Vec<f64>>,
    /// Continuous actions before clamping and rounding.
    pub actions: Vec<Vec<f64>>,
    /// `ln π(a_t | s_t; θ)` at the generating parameters.
    pub log_probs: Vec<f64>,
    /// `∇_θ ln π(a_t | s_t; θ)` at the generating parameters.
    pub grads: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// `Σ_t δ^t r_t`.
    pub ret: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// `Σ_t ∇ ln π` at the generating parameters.
    pub fn score(&self) -> Vec<f64> {
        let dim = self.grads.first().map_or(0, Vec::len);
        let mut out = vec![0.0; dim];
        for g in &self.grads {
            out.iter_mut().zip(g).for_each(|(o, v)| *o += v);
        }
        out
    }
}

fn check_episode(horizon: usize, discount: f64) -> Result<()> {
    if horizon == 0 {
        return Err(domain("horizon", 0.0, ">= 1"));
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return Err(domain("discount", discount, "in (0, 1]"));
    }
    Ok(())
}

fn check_shapes(params: &EchelonParams, policy: &PolicySpec, theta: &[f64]) -> Result<()> {
    policy.check(theta)?;
    if policy.inputs != params.feature_len() || policy.outputs != params.echelons() {
        return Err(DrmError::Config(format!(
            "policy maps {} inputs to {} orders but the chain has {} features and {} echelons",
            policy.inputs,
            policy.outputs,
            params.feature_len(),
            params.echelons()
        )));
    }
    Ok(())
}

/// Simulate `horizon` periods under `policy` at `theta`.
pub fn rollout(params: &EchelonParams, policy: &PolicySpec, theta: &[f64], horizon: usize, discount: f64, rng: &mut impl Rng) -> Result<Trajectory> {
    check_episode(horizon, discount)?;
    check_shapes(params, policy, theta)?;
    let mut traj = Trajectory {
        observations: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        grads: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        ret: 0.0,
    };
    let mut state = InventoryState::initial(params);
    let mut obs = Vec::with_capacity(params.feature_len());
    let mut scale = 1.0;
    for _ in 0..horizon {
        state.features(horizon, &mut obs);
        let action = policy.sample(theta, &obs, rng);
        let mut grad = vec![0.0; theta.len()];
        let lp = policy.log_prob_grad(theta, &obs, &action, &mut grad);
        let (next, r) = env_step(params, &state, &env::to_orders(&action), rng)?;
        traj.ret += scale * r;
        scale *= discount;
        traj.observations.push(obs.clone());
        traj.actions.push(action);
        traj.log_probs.push(lp);
        traj.grads.push(grad);
        traj.rewards.push(r);
        state = next;
    }
    Ok(traj)
}

/// Log-likelihood of the recorded actions at `theta`; `Σ_t ∇ ln π` is
/// written to `grad`.
pub fn rescore(policy: &PolicySpec, theta: &[f64], traj: &Trajectory, grad: &mut [f64]) -> Result<f64> {
    policy.check(theta)?;
    grad.iter_mut().for_each(|g| *g = 0.0);
    Ok(traj
        .observations
        .iter()
        .zip(&traj.actions)
        .map(|(o, a)| policy.log_prob_grad(theta, o, a, grad))
        .sum())
}

/// `Π_t π(a_t|s_t; θ_new) / π(a_t|s_t; θ_gen)`, accumulated in log space.
pub fn is_ratio(policy: &PolicySpec, traj: &Trajectory, theta_new: &[f64], theta_gen: &[f64]) -> Result<f64> {
    policy.check(theta_new)?;
    policy.check(theta_gen)?;
    let log: f64 = traj
        .observations
        .iter()
        .zip(&traj.actions)
        .map(|(o, a)| policy.log_prob(theta_new, o, a) - policy.log_prob(theta_gen, o, a))
        .sum();
    Ok(log.exp())
}

/// Whether `rho` lies in `[1 − ε, 1 + ε]`.
pub fn within_tolerance(rho: f64, eps: f64) -> bool {
    (1.0 - eps..=1.0 + eps).contains(&rho)
}

/// Simulate with an arbitrary order rule, calling `visit(prev, next, reward)`
/// after every period. Returns the discounted return.
pub fn simulate<R, F, V>(params: &EchelonParams, horizon: usize, discount: f64, rng: &mut R, mut orders: F, mut visit: V) -> Result<f64>
where
    R: Rng,
    F: FnMut(&InventoryState, &mut R) -> Vec<f64>,
    V: FnMut(&InventoryState, &InventoryState, f64),
{
    check_episode(horizon, discount)?;
    let mut state = InventoryState::initial(params);
    let mut ret = 0.0;
    let mut scale = 1.0;
    for _ in 0..horizon {
        let q = orders(&state, rng);
        let (next, r) = env_step(params, &state, &q, rng)?;
        visit(&state, &next, r);
        ret += scale * r;
        scale *= discount;
        state = next;
    }
    Ok(ret)
}

/// Orders drawn independently and uniformly from `{0, …, max demand}`.
pub fn uniform_orders(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let top = env::MAX_DEMAND as u32;
    (0..m).map(|_| rng.random_range(0..=top) as f64).collect()
}

/// Mean return of the uniform-random order rule over `episodes` episodes.
pub fn random_baseline(params: &EchelonParams, horizon: usize, discount: f64, episodes: usize, rng: &mut impl Rng) -> Result<f64> {
    if episodes == 0 {
        return Err(DrmError::InsufficientData { needed: 1, got: 0 });
    }
    let m = params.echelons();
    let mut total = 0.0;
    for _ in 0..episodes {
        total += simulate(params, horizon, discount, rng, |_, r| uniform_orders(m, r), |_, _, _| {})?;
    }
    Ok(total / episodes as f64)
}

/// Mean return of the stochastic policy at `theta` over `episodes` episodes.
pub fn evaluate(params: &EchelonParams, policy: &PolicySpec, theta: &[f64], horizon: usize, discount: f64, episodes: usize, rng: &mut impl Rng) -> Result<f64> {
    if episodes == 0 {
        return Err(DrmError::InsufficientData { needed: 1, got: 0 });
    }
    check_shapes(params, policy, theta)?;
    let mut obs = Vec::new();
    let mut total = 0.0;
    for _ in 0..episodes {
        total += simulate(
            params,
            horizon,
            discount,
            rng,
            |s, r| {
                s.features(horizon, &mut obs);
                env::to_orders(&policy.sample(theta, &obs, r))
            },
            |_, _, _| {},
        )?;
    }
    Ok(total / episodes as f64)
}
