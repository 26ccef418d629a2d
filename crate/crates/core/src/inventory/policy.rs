//! Gaussian policy over order quantities: one tanh hidden layer, linear
//! mean heads and a state-independent log standard deviation per head.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DrmError, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Shape of the network. Parameters are packed as `W1 (hidden × inputs)`,
/// `b1`, `W2 (outputs × hidden)`, `b2`, `log_std`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// Mean head `j` is `offset + scale · o_j`.
    pub action_offset: f64,
    pub action_scale: f64,
    pub init_log_std: f64,
}

/// Mean and clamped log standard deviation for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicySpec {
    pub fn new(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            inputs,
            hidden,
            outputs,
            action_offset: 0.0,
            action_scale: 1.0,
            init_log_std: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        let (n, h, m) = (self.inputs, self.hidden, self.outputs);
        h * n + h + m * h + m + m
    }

    fn offsets(&self) -> [usize; 5] {
        let (n, h, m) = (self.inputs, self.hidden, self.outputs);
        let w1 = 0;
        let b1 = w1 + h * n;
        let w2 = b1 + h;
        let b2 = w2 + m * h;
        let ls = b2 + m;
        [w1, b1, w2, b2, ls]
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(DrmError::DimensionMismatch {
                context: "policy parameters",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    /// Glorot-uniform weights, zero biases, constant log std.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        let [w1, b1, w2, b2, ls] = self.offsets();
        let r1 = (6.0 / (self.inputs + self.hidden) as f64).sqrt();
        let r2 = (6.0 / (self.hidden + self.outputs) as f64).sqrt();
        for v in &mut theta[w1..b1] {
            *v = rng.random_range(-r1..r1);
        }
        for v in &mut theta[w2..b2] {
            *v = rng.random_range(-r2..r2);
        }
        theta[ls..].iter_mut().for_each(|v| *v = self.init_log_std);
        theta
    }

    fn hidden_layer(&self, theta: &[f64], obs: &[f64], out: &mut Vec<f64>) {
        let [w1, b1, ..] = self.offsets();
        let n = self.inputs;
        out.clear();
        out.extend((0..self.hidden).map(|r| {
            let row = &theta[w1 + r * n..w1 + (r + 1) * n];
            let a: f64 = row.iter().zip(obs).map(|(w, x)| w * x).sum::<f64>() + theta[b1 + r];
            a.tanh()
        }));
    }

    pub fn forward(&self, theta: &[f64], obs: &[f64]) -> Head {
        let mut hid = Vec::with_capacity(self.hidden);
        self.hidden_layer(theta, obs, &mut hid);
        self.heads(theta, &hid)
    }

    fn heads(&self, theta: &[f64], hid: &[f64]) -> Head {
        let [_, _, w2, b2, ls] = self.offsets();
        let h = self.hidden;
        let mean = (0..self.outputs)
            .map(|j| {
                let row = &theta[w2 + j * h..w2 + (j + 1) * h];
                let o: f64 = row.iter().zip(hid).map(|(w, x)| w * x).sum::<f64>() + theta[b2 + j];
                self.action_offset + self.action_scale * o
            })
            .collect();
        let log_std = theta[ls..ls + self.outputs].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Head { mean, log_std }
    }

    /// Draw a continuous action.
    pub fn sample(&self, theta: &[f64], obs: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let head = self.forward(theta, obs);
        head.mean
            .iter()
            .zip(&head.log_std)
            .map(|(m, ls)| {
                let e: f64 = rng.sample(StandardNormal);
                m + ls.exp() * e
            })
            .collect()
    }

    pub fn log_prob(&self, theta: &[f64], obs: &[f64], action: &[f64]) -> f64 {
        let head = self.forward(theta, obs);
        log_density(&head, action)
    }

    /// `ln π(a | s; θ)`, adding `∇_θ ln π` into `grad`.
    pub fn log_prob_grad(&self, theta: &[f64], obs: &[f64], action: &[f64], grad: &mut [f64]) -> f64 {
        let [w1, b1, w2, b2, ls] = self.offsets();
        let (n, h) = (self.inputs, self.hidden);
        let mut hid = Vec::with_capacity(h);
        self.hidden_layer(theta, obs, &mut hid);
        let head = self.heads(theta, &hid);

        let mut back = vec![0.0; h];
        for j in 0..self.outputs {
            let raw = theta[ls + j];
            let var = (2.0 * head.log_std[j]).exp();
            let u = action[j] - head.mean[j];
            // d/dμ and d/dlog σ of the Gaussian log density
            let dmean = u / var;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grad[ls + j] += u * u / var - 1.0;
            }
            let g = dmean * self.action_scale;
            grad[b2 + j] += g;
            let row = &theta[w2 + j * h..w2 + (j + 1) * h];
            for r in 0..h {
                grad[w2 + j * h + r] += g * hid[r];
                back[r] += g * row[r];
            }
        }
        for r in 0..h {
            let g = back[r] * (1.0 - hid[r] * hid[r]);
            grad[b1 + r] += g;
            for (gw, x) in grad[w1 + r * n..w1 + (r + 1) * n].iter_mut().zip(obs) {
                *gw += g * x;
            }
        }
        log_density(&head, action)
    }
}

fn log_density(head: &Head, action: &[f64]) -> f64 {
    head.mean
        .iter()
        .zip(&head.log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let u = (a - m) / ls.exp();
            -0.5 * u * u - ls - LN_SQRT_2PI
        })
        .sum()
}
