//! Standard normal density, distribution and quantile functions.

use statrs::function::erf;

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of [`cdf`]. Returns ±∞ at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Newton polish; erfc_inv alone is good to about 1e-10 relative
    let d = pdf(x);
    if d > 0.0 {
        x - (cdf(x) - p) / d
    } else {
        x
    }
}
