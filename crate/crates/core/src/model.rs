//! Observable models `Y(θ) = L(X(θ))` with known score `∇_θ ln f_X`.
//!
//! The evaluation map `L` never depends on θ, so the score of the input
//! density is all a CDF-gradient estimator needs.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{domain, DrmError, Result};
use crate::normal;
use crate::oracle::QuantileFn;

/// One draw from an observable model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelSample {
    /// The raw input draw `X`.
    pub x: Vec<f64>,
    /// The observable `Y = L(X)`.
    pub y: f64,
    /// `∇_θ ln f_X(X; θ)` at the sampling parameter.
    pub score: Vec<f64>,
}

/// A distribution of `Y` with closed-form CDF, used as a test oracle.
pub trait AnalyticLaw: QuantileFn {
    fn cdf(&self, y: f64) -> f64;
}

pub trait ObservableModel: Send + Sync {
    /// Dimension of θ.
    fn dim(&self) -> usize;

    /// Append `n` draws at `theta` to `out`.
    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut dyn RngCore, out: &mut Vec<ModelSample>);

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> ModelSample {
        let mut out = Vec::with_capacity(1);
        self.sample_batch(theta, 1, rng, &mut out);
        out.pop().expect("one sample")
    }

    /// `∇_θ ln f_X(x; θ)`.
    fn score(&self, theta: &[f64], x: &[f64]) -> Vec<f64>;

    /// `ln f_X(x; θ)`; used by the finite-difference score oracle.
    fn log_density(&self, theta: &[f64], x: &[f64]) -> f64;

    /// Law of `Y` at `theta` when it is available in closed form.
    fn law(&self, _theta: &[f64]) -> Option<Box<dyn AnalyticLaw>> {
        None
    }

    /// `∇_θ F(y; θ)`; central differences of the analytic CDF by default.
    fn cdf_grad(&self, theta: &[f64], y: f64) -> Option<Vec<f64>> {
        let h = 1e-6;
        let mut t = theta.to_vec();
        let mut grad = vec![0.0; theta.len()];
        for j in 0..theta.len() {
            t[j] = theta[j] + h;
            let up = self.law(&t)?.cdf(y);
            t[j] = theta[j] - h;
            let down = self.law(&t)?.cdf(y);
            t[j] = theta[j];
            grad[j] = (up - down) / (2.0 * h);
        }
        Some(grad)
    }

    fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(DrmError::DimensionMismatch {
                context: "model parameter",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        if let Some(bad) = theta.iter().find(|v| !v.is_finite()) {
            return Err(domain("theta", *bad, "finite"));
        }
        Ok(())
    }

    fn describe(&self) -> String;
}

/// Central finite-difference score, an oracle for analytic scores.
pub fn score_fd(model: &dyn ObservableModel, theta: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            t[j] = theta[j] + h;
            let up = model.log_density(&t, x);
            t[j] = theta[j] - h;
            let down = model.log_density(&t, x);
            t[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Quantile of an analytic law with domain checking.
pub fn analytic_quantile(law: &dyn AnalyticLaw, z: f64) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(domain("z", z, "(0, 1)"));
    }
    Ok(law.quantile(z))
}

/// `Y = θ + Z` with `Z ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussLocation;

#[derive(Debug, Clone, Copy)]
pub struct ShiftedNormal {
    pub location: f64,
}

impl QuantileFn for ShiftedNormal {
    fn quantile(&self, z: f64) -> f64 {
        self.location + normal::quantile(z)
    }
}

impl AnalyticLaw for ShiftedNormal {
    fn cdf(&self, y: f64) -> f64 {
        normal::cdf(y - self.location)
    }
}

impl ObservableModel for GaussLocation {
    fn dim(&self) -> usize {
        1
    }

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut dyn RngCore, out: &mut Vec<ModelSample>) {
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let x = theta[0] + z;
            out.push(ModelSample {
                x: vec![x],
                y: x,
                score: vec![z],
            });
        }
    }

    fn score(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        vec![x[0] - theta[0]]
    }

    fn log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        normal::pdf(x[0] - theta[0]).ln()
    }

    fn law(&self, theta: &[f64]) -> Option<Box<dyn AnalyticLaw>> {
        Some(Box::new(ShiftedNormal { location: theta[0] }))
    }

    fn cdf_grad(&self, theta: &[f64], y: f64) -> Option<Vec<f64>> {
        Some(vec![-normal::pdf(y - theta[0])])
    }

    fn describe(&self) -> String {
        "gauss-location".into()
    }
}

/// `Y = −(X − c)²` with `X ~ N(θ, 1)`: the mean of `Y` is
/// `−1 − (θ − c)²`, maximised in the interior at `θ = c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticLoss {
    pub center: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NegSquaredNormal {
    /// Mean of `X − c`.
    pub offset: f64,
}

impl NegSquaredNormal {
    fn tail(&self, s: f64) -> f64 {
        // P(|X − c| >= s)
        normal::cdf(-s - self.offset) + normal::cdf(-s + self.offset)
    }
}

impl QuantileFn for NegSquaredNormal {
    fn quantile(&self, z: f64) -> f64 {
        // F(y) = P(|X−c| >= √−y) is increasing in y on (−∞, 0]
        let (mut lo, mut hi) = (0.0f64, 40.0 + self.offset.abs());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.tail(mid) > z {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * (1.0 + hi) {
                break;
            }
        }
        let s = 0.5 * (lo + hi);
        -s * s
    }
}

impl AnalyticLaw for NegSquaredNormal {
    fn cdf(&self, y: f64) -> f64 {
        if y >= 0.0 {
            1.0
        } else {
            self.tail((-y).sqrt())
        }
    }
}

impl ObservableModel for QuadraticLoss {
    fn dim(&self) -> usize {
        1
    }

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut dyn RngCore, out: &mut Vec<ModelSample>) {
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let x = theta[0] + z;
            let d = x - self.center;
            out.push(ModelSample {
                x: vec![x],
                y: -d * d,
                score: vec![z],
            });
        }
    }

    fn score(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        vec![x[0] - theta[0]]
    }

    fn log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        normal::pdf(x[0] - theta[0]).ln()
    }

    fn law(&self, theta: &[f64]) -> Option<Box<dyn AnalyticLaw>> {
        Some(Box::new(NegSquaredNormal {
            offset: theta[0] - self.center,
        }))
    }

    fn describe(&self) -> String {
        format!("quadratic:c={}", self.center)
    }
}

/// Raw mixture parameters `{(w_j, μ_j, ln σ_j)}` laid out component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub raw: Vec<f64>,
}

impl MixtureParams {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.len() % 3 != 0 {
            return Err(DrmError::DimensionMismatch {
                context: "mixture parameters (multiple of 3)",
                expected: 3 * raw.len().div_ceil(3).max(1),
                actual: raw.len(),
            });
        }
        Ok(Self { raw })
    }

    pub fn components(&self) -> usize {
        self.raw.len() / 3
    }
}

/// A Gaussian mixture `Σ w_j N(μ_j, σ_j²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Map raw parameters to a mixture with mean 0 and variance 1:
/// softmax weights, centre by the mixture mean, scale by the mixture std.
pub fn normalize_mixture(raw: &[f64]) -> GaussianMixture {
    let d = raw.len() / 3;
    let max_w = (0..d).map(|j| raw[3 * j]).fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = (0..d).map(|j| (raw[3 * j] - max_w).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mu_mix: f64 = (0..d).map(|j| weights[j] * raw[3 * j + 1]).sum();
    let centred: Vec<f64> = (0..d).map(|j| raw[3 * j + 1] - mu_mix).collect();
    let sigmas: Vec<f64> = (0..d).map(|j| raw[3 * j + 2].exp()).collect();
    let var_mix: f64 = (0..d)
        .map(|j| weights[j] * (sigmas[j] * sigmas[j] + centred[j] * centred[j]))
        .sum();
    let s = var_mix.sqrt();
    GaussianMixture {
        means: centred.iter().map(|m| m / s).collect(),
        stds: sigmas.iter().map(|sg| sg / s).collect(),
        weights,
    }
}

impl GaussianMixture {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (mu, s))| w * (s * s + (mu - m) * (mu - m)))
            .sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * normal::pdf((y - m) / s) / s)
            .sum()
    }

    fn support_bracket(&self) -> (f64, f64) {
        let lo = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m - 40.0 * s)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .means
            .iter()
            .zip(&self.stds)
            .map(|(m, s)| m + 40.0 * s)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Safeguarded Newton iteration inside `[lo, hi]`, stopping once
    /// `|F(q) − z| ≤ 1e-12`.
    fn solve(&self, z: f64, mut lo: f64, mut hi: f64, start: f64) -> f64 {
        let mut q = start.clamp(lo, hi);
        for _ in 0..200 {
            let f = self.cdf(q) - z;
            if f.abs() <= 1e-12 {
                return q;
            }
            if f > 0.0 {
                hi = q;
            } else {
                lo = q;
            }
            let dens = self.pdf(q);
            let newton = q - f / dens;
            q = if dens > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * (1.0 + q.abs()) {
                return q;
            }
        }
        q
    }
}

impl QuantileFn for GaussianMixture {
    fn quantile(&self, z: f64) -> f64 {
        let (lo, hi) = self.support_bracket();
        self.solve(z, lo, hi, self.mean())
    }

    fn quantiles(&self, zs: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.support_bracket();
        let mut out = Vec::with_capacity(zs.len());
        let mut prev: Option<(f64, f64)> = None;
        for &z in zs {
            let q = match prev {
                // sorted sweep: the previous root brackets from below
                Some((pz, pq)) if z >= pz => self.solve(z, pq, hi, pq),
                _ => self.solve(z, lo, hi, self.mean()),
            };
            prev = Some((z, q));
            out.push(q);
        }
        out
    }
}

impl AnalyticLaw for GaussianMixture {
    fn cdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(w, (m, s))| w * normal::cdf((y - m) / s))
            .sum()
    }
}

/// Default feasible half-width for raw mixture parameters.
pub const MIXTURE_BOX: f64 = 2.5;

/// The normalized Gaussian mixture with `d` components; θ has length `3d`.
#[derive(Debug, Clone, Copy)]
pub struct NormalizedMixture {
    pub components: usize,
}

impl NormalizedMixture {
    pub fn new(components: usize) -> Result<Self> {
        if components == 0 {
            return Err(domain("components", 0.0, ">= 1"));
        }
        Ok(Self { components })
    }

    /// Score at `x` given a precomputed normalization of `raw`.
    fn score_with(&self, raw: &[f64], mix: &GaussianMixture, x: f64, out: &mut Vec<f64>) {
        let d = self.components;
        out.clear();
        out.resize(3 * d, 0.0);
        // responsibilities and standardized residuals
        let mut dens = vec![0.0; d];
        let mut total = 0.0;
        for j in 0..d {
            let u = (x - mix.means[j]) / mix.stds[j];
            dens[j] = mix.weights[j] * normal::pdf(u) / mix.stds[j];
            total += dens[j];
        }
        if !(total > 0.0) {
            // x is numerically outside every component; the score is the
            // gradient of the dominant component's log-density
            let j = (0..d)
                .max_by(|&a, &b| {
                    let la = mix.weights[a].ln() - mix.stds[a].ln()
                        - 0.5 * ((x - mix.means[a]) / mix.stds[a]).powi(2);
                    let lb = mix.weights[b].ln() - mix.stds[b].ln()
                        - 0.5 * ((x - mix.means[b]) / mix.stds[b]).powi(2);
                    la.total_cmp(&lb)
                })
                .unwrap();
            dens.iter_mut().for_each(|v| *v = 0.0);
            dens[j] = 1.0;
            total = 1.0;
        }

        let s = {
            let mu_mix: f64 = (0..d).map(|j| mix.weights[j] * raw[3 * j + 1]).sum();
            let var: f64 = (0..d)
                .map(|j| {
                    let c = raw[3 * j + 1] - mu_mix;
                    let sg = raw[3 * j + 2].exp();
                    mix.weights[j] * (sg * sg + c * c)
                })
                .sum();
            var.sqrt()
        };
        let centred: Vec<f64> = (0..d).map(|j| mix.means[j] * s).collect();
        let sigmas: Vec<f64> = (0..d).map(|j| mix.stds[j] * s).collect();

        // reverse-mode sweep through the normalization map
        let mut bar_w = vec![0.0; d]; // adjoint of normalized weights
        let mut bar_c = vec![0.0; d]; // adjoint of centred means
        let mut bar_sig = vec![0.0; d];
        let mut bar_s = 0.0;
        for j in 0..d {
            let p = dens[j] / total;
            let u = (x - mix.means[j]) / mix.stds[j];
            let bar_mu_n = p * u / mix.stds[j];
            let bar_sd_n = p * (u * u - 1.0) / mix.stds[j];
            bar_w[j] += p / mix.weights[j];
            bar_c[j] += bar_mu_n / s;
            bar_sig[j] += bar_sd_n / s;
            bar_s -= (bar_mu_n * centred[j] + bar_sd_n * sigmas[j]) / (s * s);
        }
        let bar_var = bar_s / (2.0 * s);
        for j in 0..d {
            bar_w[j] += bar_var * (sigmas[j] * sigmas[j] + centred[j] * centred[j]);
            bar_sig[j] += bar_var * 2.0 * mix.weights[j] * sigmas[j];
            bar_c[j] += bar_var * 2.0 * mix.weights[j] * centred[j];
        }
        let bar_mu_mix: f64 = -bar_c.iter().sum::<f64>();
        let mut bar_mu = bar_c;
        for j in 0..d {
            let raw_mu = raw[3 * j + 1];
            bar_w[j] += bar_mu_mix * raw_mu;
            bar_mu[j] += bar_mu_mix * mix.weights[j];
        }
        let dot: f64 = (0..d).map(|j| mix.weights[j] * bar_w[j]).sum();
        for j in 0..d {
            out[3 * j] = mix.weights[j] * (bar_w[j] - dot);
            out[3 * j + 1] = bar_mu[j];
            out[3 * j + 2] = bar_sig[j] * sigmas[j];
        }
    }
}

impl ObservableModel for NormalizedMixture {
    fn dim(&self) -> usize {
        3 * self.components
    }

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut dyn RngCore, out: &mut Vec<ModelSample>) {
        let mix = normalize_mixture(theta);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = self.components - 1;
            for (idx, w) in mix.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    j = idx;
                    break;
                }
            }
            let z: f64 = rng.sample(StandardNormal);
            let x = mix.means[j] + mix.stds[j] * z;
            let mut score = Vec::new();
            self.score_with(theta, &mix, x, &mut score);
            out.push(ModelSample {
                x: vec![x],
                y: x,
                score,
            });
        }
    }

    fn score(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mix = normalize_mixture(theta);
        let mut out = Vec::new();
        self.score_with(theta, &mix, x[0], &mut out);
        out
    }

    fn log_density(&self, theta: &[f64], x: &[f64]) -> f64 {
        normalize_mixture(theta).pdf(x[0]).ln()
    }

    fn law(&self, theta: &[f64]) -> Option<Box<dyn AnalyticLaw>> {
        Some(Box::new(normalize_mixture(theta)))
    }

    fn describe(&self) -> String {
        format!("mixture:d={}", self.components)
    }
}

/// Parse `gauss-location`, `quadratic[:c=<center>]` or `mixture:d=<n>`.
pub fn parse_model(spec: &str) -> Result<Box<dyn ObservableModel>> {
    let err = |reason: &str| DrmError::Parse {
        what: "model",
        input: spec.to_string(),
        reason: reason.to_string(),
    };
    let s = spec.trim();
    if s == "gauss-location" {
        return Ok(Box::new(GaussLocation));
    }
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let value = |key: &str| -> Result<Option<f64>> {
        if arg.is_empty() {
            return Ok(None);
        }
        let (k, v) = arg.split_once('=').ok_or_else(|| err("expected key=value"))?;
        if k.trim() != key {
            return Err(err(&format!("expected key {key}")));
        }
        v.trim().parse().map(Some).map_err(|_| err("bad number"))
    };
    match name {
        "mixture" => {
            let d = value("d")?.ok_or_else(|| err("mixture needs d=<components>"))?;
            if d < 1.0 || d.fract() != 0.0 {
                return Err(err("d must be a positive integer"));
            }
            Ok(Box::new(NormalizedMixture::new(d as usize)?))
        }
        "quadratic" => Ok(Box::new(QuadraticLoss {
            center: value("c")?.unwrap_or(0.0),
        })),
        _ => Err(err("unknown model")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_raw(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..3 * d).map(|_| rng.random_range(-2.5..2.5)).collect()
    }

    #[test]
    fn normalize_single_component() {
        let m = normalize_mixture(&[0.0, 5.0, 0.0]);
        assert!((m.weights[0] - 1.0).abs() < 1e-15);
        assert!(m.means[0].abs() < 1e-15);
        assert!((m.stds[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalize_two_components_by_hand() {
        let m = normalize_mixture(&[0.0, 0.0, -1.0, 1.0, 0.0, 0.0]);
        // raw laid out (w, μ, lnσ): components (w=0, μ=0, lnσ=−1) and (w=1, μ=0, lnσ=0)
        let e = std::f64::consts::E;
        let w0 = 1.0 / (1.0 + e);
        assert!((m.weights[0] - w0).abs() < 1e-15);
        assert!((m.mean()).abs() < 1e-15);
        assert!((m.variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_symmetric_pair() {
        // equal weights, means ∓1, unit stds: σ²_mix = 2
        let m = normalize_mixture(&[0.0, -1.0, 0.0, 0.0, 1.0, 0.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.weights[0] - 0.5).abs() < 1e-15);
        assert!((m.means[0] + r).abs() < 1e-15 && (m.means[1] - r).abs() < 1e-15);
        assert!((m.stds[0] - r).abs() < 1e-15 && (m.stds[1] - r).abs() < 1e-15);

        // empirical moments from the sampler
        let model = NormalizedMixture::new(2).unwrap();
        let theta = [0.0, -1.0, 0.0, 0.0, 1.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut out = Vec::new();
        model.sample_batch(&theta, 1_000_000, &mut rng, &mut out);
        let n = out.len() as f64;
        let mean = out.iter().map(|s| s.y).sum::<f64>() / n;
        let var = out.iter().map(|s| (s.y - mean).powi(2)).sum::<f64>() / n;
        let below = out.iter().filter(|s| s.y < 0.0).count() as f64 / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.01);
        assert!((below - 0.5).abs() < 4.0 * 0.5 / n.sqrt());
        assert!(m.quantile(0.5).abs() < 1e-10);
    }

    #[test]
    fn normalization_moment_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let raw = random_raw(&mut rng, 10);
            let m = normalize_mixture(&raw);
            assert!(m.mean().abs() < 1e-12);
            assert!((m.variance() - 1.0).abs() < 1e-12);
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(m.weights.iter().all(|w| *w > 0.0));

            let c: f64 = rng.random_range(-3.0..3.0);
            let mut shifted_mu = raw.clone();
            let mut shifted_w = raw.clone();
            for j in 0..10 {
                shifted_mu[3 * j + 1] += c;
                shifted_w[3 * j] += c;
            }
            for other in [normalize_mixture(&shifted_mu), normalize_mixture(&shifted_w)] {
                for j in 0..10 {
                    assert!((other.weights[j] - m.weights[j]).abs() < 1e-12);
                    assert!((other.means[j] - m.means[j]).abs() < 1e-12);
                    assert!((other.stds[j] - m.stds[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gauss_location_basics() {
        let model = GaussLocation;
        assert_eq!(model.score(&[0.5], &[2.0]), vec![1.5]);
        let law = model.law(&[1.0]).unwrap();
        assert!((law.quantile(0.5) - 1.0).abs() < 1e-15);
        let std = model.law(&[0.0]).unwrap();
        assert!((analytic_quantile(std.as_ref(), 0.7).unwrap() - 0.524_400_512_708_041).abs() < 1e-9);
        assert!(analytic_quantile(std.as_ref(), 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = Vec::new();
        model.sample_batch(&[0.0], 1_000_000, &mut rng, &mut out);
        let mean = out.iter().map(|s| s.y).sum::<f64>() / 1e6;
        assert!(mean.abs() < 4.0 / 1e3);
        assert_eq!(model.cdf_grad(&[0.3], 0.3).unwrap()[0], -normal::pdf(0.0));
    }

    #[test]
    fn mixture_score_matches_finite_difference() {
        let model = NormalizedMixture::new(2).unwrap();
        let theta = [0.0, -1.0, 0.0, 0.0, 1.0, 0.0];
        let a = model.score(&theta, &[0.3]);
        let b = score_fd(&model, &theta, &[0.3], 1e-6);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-4 * y.abs().max(1e-3), "{a:?} vs {b:?}");
        }

        let model = NormalizedMixture::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let theta = random_raw(&mut rng, 10);
            let s = model.sample(&theta, &mut rng);
            let a = model.score(&theta, &s.x);
            assert_eq!(a, s.score);
            let b = score_fd(&model, &theta, &s.x, 1e-6);
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-4 * scale, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn mixture_score_has_zero_mean() {
        let model = NormalizedMixture::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let theta = random_raw(&mut rng, 3);
        let mut out = Vec::new();
        model.sample_batch(&theta, 100_000, &mut rng, &mut out);
        let n = out.len() as f64;
        for j in 0..9 {
            let mean = out.iter().map(|s| s.score[j]).sum::<f64>() / n;
            let var = out.iter().map(|s| (s.score[j] - mean).powi(2)).sum::<f64>() / n;
            let se = (var / n).sqrt();
            assert!(mean.abs() < 3.0 * se + 1e-12, "coordinate {j}: {mean} ± {se}");
        }
    }

    #[test]
    fn mixture_quantile_inverts_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m = normalize_mixture(&random_raw(&mut rng, 10));
            let zs: Vec<f64> = (1..500).map(|i| i as f64 / 500.0).collect();
            let qs = m.quantiles(&zs);
            for (z, q) in zs.iter().zip(&qs) {
                assert!((m.cdf(*q) - z).abs() <= 1e-11, "z = {z}");
            }
            for p in qs.windows(2) {
                assert!(p[1] >= p[0]);
            }
            assert!((m.quantile(0.3) - qs[149]).abs() < 1e-9);
        }
    }

    #[test]
    fn sampler_passes_ks_test() {
        let model = NormalizedMixture::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let theta = random_raw(&mut rng, 10);
        let law = model.law(&theta).unwrap();
        let mut out = Vec::new();
        model.sample_batch(&theta, 100_000, &mut rng, &mut out);
        let mut ys: Vec<f64> = out.iter().map(|s| s.y).collect();
        ys.sort_by(f64::total_cmp);
        let n = ys.len() as f64;
        let d = ys
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let f = law.cdf(*y);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0f64, f64::max);
        // 1% critical value of the Kolmogorov distribution
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn quadratic_loss_law() {
        let model = QuadraticLoss { center: 0.5 };
        let law = model.law(&[1.2]).unwrap();
        for z in [0.1, 0.4, 0.8, 0.99] {
            let q = law.quantile(z);
            assert!((law.cdf(q) - z).abs() < 1e-10);
        }
        let h = 1e-6;
        let g = model.cdf_grad(&[1.2], -0.5).unwrap()[0];
        let fd = (model.law(&[1.2 + h]).unwrap().cdf(-0.5) - model.law(&[1.2 - h]).unwrap().cdf(-0.5))
            / (2.0 * h);
        assert!((g - fd).abs() < 1e-8);
    }

    #[test]
    fn parse_models() {
        assert_eq!(parse_model("mixture:d=10").unwrap().dim(), 30);
        assert_eq!(parse_model("gauss-location").unwrap().dim(), 1);
        assert_eq!(parse_model("quadratic:c=0.5").unwrap().describe(), "quadratic:c=0.5");
        assert!(parse_model("mixture").is_err());
        assert!(parse_model("mixture:d=0").is_err());
        assert!(parse_model("bogus").is_err());
    }
}
