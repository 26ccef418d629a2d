//! Analytic targets: the worst-case quantile function under a mean-zero,
//! unit-variance constraint, risk evaluation from a quantile function, and
//! the Wasserstein-2 distance between quantile functions.

use crate::distortion::{concave_envelope, weights, DistortionFn, Grid, PiecewiseLinear, DEFAULT_ENVELOPE_RESOLUTION};
use crate::error::{domain, DrmError, Result};

/// A quantile function `z ↦ F⁻¹(z)` on (0, 1).
pub trait QuantileFn {
    fn quantile(&self, z: f64) -> f64;

    /// Batched evaluation; `zs` is typically sorted ascending.
    fn quantiles(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.quantile(z)).collect()
    }
}

impl<F: Fn(f64) -> f64> QuantileFn for F {
    fn quantile(&self, z: f64) -> f64 {
        self(z)
    }
}

/// The quantile function maximising the risk of `w` over all laws with
/// mean 0 and variance 1: `c^{−1/2} (w*′(1 − z) − 1)` with `w*` the
/// concave envelope of `w`.
#[derive(Debug, Clone)]
pub struct WorstCase {
    envelope: PiecewiseLinear,
    scale: f64,
}

impl WorstCase {
    pub fn new(w: &DistortionFn) -> Result<Self> {
        Self::with_resolution(w, DEFAULT_ENVELOPE_RESOLUTION)
    }

    pub fn with_resolution(w: &DistortionFn, resolution: usize) -> Result<Self> {
        let envelope = concave_envelope(w, resolution)?;
        // the integrand is piecewise constant on the envelope segments
        let c: f64 = envelope
            .segments()
            .map(|(x0, x1, s)| (s - 1.0) * (s - 1.0) * (x1 - x0))
            .sum();
        if !(c > 1e-12) {
            return Err(DrmError::Degenerate(format!(
                "concave envelope of {w} is the identity; every centred unit-variance law is worst case"
            )));
        }
        Ok(Self {
            envelope,
            scale: c.sqrt().recip(),
        })
    }

    pub fn envelope(&self) -> &PiecewiseLinear {
        &self.envelope
    }

    /// `c` in `c^{−1/2}(w*′ − 1)`.
    pub fn normalizer(&self) -> f64 {
        self.scale.powi(-2)
    }

    pub fn try_quantile(&self, z: f64) -> Result<f64> {
        if !(z > 0.0 && z < 1.0) {
            return Err(domain("z", z, "(0, 1)"));
        }
        Ok(self.quantile(z))
    }
}

impl QuantileFn for WorstCase {
    fn quantile(&self, z: f64) -> f64 {
        self.scale * (self.envelope.left_slope(1.0 - z) - 1.0)
    }
}

/// `F⁻¹_*(z)` for a single level.
pub fn worst_case_quantile(w: &DistortionFn, z: f64) -> Result<f64> {
    WorstCase::new(w)?.try_quantile(z)
}

/// `−Σ q(z̃_i) Δw̃_i` over the grid plus the two boundary cells `[0, z_0]`
/// and `[z_N, 1]`, where `q` is extrapolated linearly from the nearest two
/// evaluation points.
pub fn drm_value(q: &dyn QuantileFn, w: &DistortionFn, g: &Grid) -> f64 {
    let vals = q.quantiles(g.eval_points());
    drm_from_values(&vals, w, g)
}

/// [`drm_value`] given `q` at the grid evaluation points.
pub fn drm_from_values(vals: &[f64], w: &DistortionFn, g: &Grid) -> f64 {
    let dw = weights(w, g);
    let pts = g.eval_points();
    let z = g.levels();
    let mut total: f64 = vals.iter().zip(&dw).map(|(v, d)| v * d).sum();

    let z0 = z[0];
    let zn = z[z.len() - 1];
    let left_weight = w.eval_unchecked(1.0 - z0) - 1.0;
    let right_weight = -w.eval_unchecked(1.0 - zn);
    let (left_q, right_q) = match vals.len() {
        0 => (0.0, 0.0),
        1 => (vals[0], vals[0]),
        n => (
            extrapolate(pts[0], vals[0], pts[1], vals[1], 0.5 * z0),
            extrapolate(pts[n - 2], vals[n - 2], pts[n - 1], vals[n - 1], 0.5 * (zn + 1.0)),
        ),
    };
    total += left_weight * left_q + right_weight * right_q;
    -total
}

fn extrapolate(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    y0 + (x - x0) * (y1 - y0) / (x1 - x0)
}

/// `√(∫₀¹ (q1 − q2)² dz)` by the midpoint rule with `resolution` points.
pub fn wasserstein2(q1: &dyn QuantileFn, q2: &dyn QuantileFn, resolution: usize) -> Result<f64> {
    if resolution < 2 {
        return Err(domain("resolution", resolution as f64, ">= 2"));
    }
    let zs = midpoints(resolution);
    let a = q1.quantiles(&zs);
    let b = q2.quantiles(&zs);
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / resolution as f64).sqrt())
}

/// `(k + ½)/n` for `k = 0..n`.
pub fn midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

/// A quantile function tabulated at increasing levels, interpolated
/// linearly and held constant outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedQuantile {
    levels: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedQuantile {
    pub fn new(levels: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if levels.len() != values.len() || levels.is_empty() {
            return Err(DrmError::DimensionMismatch {
                context: "tabulated quantile",
                expected: levels.len(),
                actual: values.len(),
            });
        }
        Ok(Self { levels, values })
    }
}

impl QuantileFn for TabulatedQuantile {
    fn quantile(&self, z: f64) -> f64 {
        let n = self.levels.len();
        let i = self.levels.partition_point(|&l| l < z);
        if i == 0 {
            self.values[0]
        } else if i == n {
            self.values[n - 1]
        } else {
            extrapolate(self.levels[i - 1], self.values[i - 1], self.levels[i], self.values[i], z)
        }
    }
}
