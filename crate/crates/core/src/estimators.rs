//! Single-sample building blocks for the quantile and quantile-gradient
//! trackers.

use crate::error::{domain, Result};
use crate::model::ModelSample;
use crate::normal;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KernelSpec {
    #[default]
    Gaussian,
}

impl KernelSpec {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelSpec::Gaussian => normal::pdf(u),
        }
    }

    /// `(1/h) K((y − q)/h)` without checking `h`.
    #[inline]
    pub fn density(self, y: f64, q: f64, h: f64) -> f64 {
        self.eval((y - q) / h) / h
    }
}

/// Score-function estimate of `−∇_θ F(q; θ)`.
pub fn g1_score(sample: &ModelSample, q: f64) -> Vec<f64> {
    if sample.y <= q {
        sample.score.iter().map(|s| -s).collect()
    } else {
        vec![0.0; sample.score.len()]
    }
}

/// Accumulate `scale · g1_score(sample, q)` into `out`.
#[inline]
pub fn g1_accumulate(sample: &ModelSample, q: f64, scale: f64, out: &mut [f64]) {
    if sample.y <= q {
        for (o, s) in out.iter_mut().zip(&sample.score) {
            *o -= scale * s;
        }
    }
}

/// Gaussian kernel density estimate of `f(q; θ)` from one draw.
pub fn g3_kernel(y: f64, q: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(domain("h", h, "> 0"));
    }
    Ok(KernelSpec::Gaussian.density(y, q, h))
}

/// Robbins–Monro step toward the `z`-quantile, optionally importance weighted.
#[inline]
pub fn quantile_step(q: f64, z: f64, y: f64, gamma_q: f64, rho: f64) -> f64 {
    let ind = if y <= q { 1.0 } else { 0.0 };
    q + gamma_q * (z - rho * ind)
}

/// `D + γ ρ (g1 − g3 D)` in place.
#[inline]
pub fn qgrad_step_in_place(d: &mut [f64], g1: &[f64], g3: f64, gamma_d: f64, rho: f64) {
    let c = gamma_d * rho;
    for (di, gi) in d.iter_mut().zip(g1) {
        *di += c * (gi - g3 * *di);
    }
}

pub fn qgrad_step(d: &[f64], g1: &[f64], g3: f64, gamma_d: f64, rho: f64) -> Vec<f64> {
    let mut out = d.to_vec();
    qgrad_step_in_place(&mut out, g1, g3, gamma_d, rho);
    out
}

/// Sort `q` and enforce gaps of at least `lq · Δz` between consecutive
/// entries, where `z` holds the levels matching `q`.
pub fn sort_clip(q: &[f64], z: &[f64], lq: f64) -> Vec<f64> {
    let mut out = q.to_vec();
    sort_clip_in_place(&mut out, z, lq);
    out
}

pub fn sort_clip_in_place(q: &mut [f64], z: &[f64], lq: f64) {
    debug_assert_eq!(q.len(), z.len());
    q.sort_by(f64::total_cmp);
    if lq <= 0.0 {
        return;
    }
    let mut prev_sorted = q.first().copied().unwrap_or(0.0);
    for i in 1..q.len() {
        let gap = q[i] - prev_sorted;
        prev_sorted = q[i];
        q[i] = q[i - 1] + gap.max(lq * (z[i] - z[i - 1]));
    }
}
