//! Cross-replication aggregation and log-log rate fits.

use drm_core::DrmError;

use crate::error::Result;

/// Per-logged-k summary of a metric across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCurve {
    pub k: Vec<u64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    /// 2.5% and 97.5% empirical quantiles, widened to include the mean.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub runs: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

impl AggregateCurve {
    /// `runs[r][i]` is the value of run `r` at `k[i]`. NaN entries are
    /// skipped; a point where every run is NaN stays NaN.
    pub fn from_runs(k: Vec<u64>, runs: &[Vec<f64>]) -> Result<Self> {
        if runs.is_empty() {
            return Err(DrmError::InsufficientData { needed: 1, got: 0 }.into());
        }
        if let Some(r) = runs.iter().find(|r| r.len() != k.len()) {
            return Err(DrmError::DimensionMismatch {
                context: "run length vs logged k",
                expected: k.len(),
                actual: r.len(),
            }
            .into());
        }
        let n = k.len();
        let mut out = Self {
            k,
            mean: Vec::with_capacity(n),
            median: Vec::with_capacity(n),
            lower: Vec::with_capacity(n),
            upper: Vec::with_capacity(n),
            runs: runs.len(),
        };
        let mut col = Vec::with_capacity(runs.len());
        for i in 0..n {
            col.clear();
            col.extend(runs.iter().map(|r| r[i]).filter(|v| !v.is_nan()));
            if col.is_empty() {
                for v in [&mut out.mean, &mut out.median, &mut out.lower, &mut out.upper] {
                    v.push(f64::NAN);
                }
                continue;
            }
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            out.mean.push(mean);
            out.median.push(quantile_sorted(&col, 0.5));
            out.lower.push(quantile_sorted(&col, 0.025).min(mean));
            out.upper.push(quantile_sorted(&col, 0.975).max(mean));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// CSV with header `k,mean,median,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean,median,lower,upper\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                self.k[i], self.mean[i], self.median[i], self.lower[i], self.upper[i]
            ));
        }
        out
    }
}

/// Least-squares slope of `ln mean` against `ln k` over `k_min ≤ k ≤ k_max`.
pub fn rate_slope(curve: &AggregateCurve, k_min: u64, k_max: u64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .k
        .iter()
        .zip(&curve.mean)
        .filter(|(&k, m)| k >= k_min && k <= k_max && k > 0 && **m > 0.0 && m.is_finite())
        .map(|(&k, &m)| ((k as f64).ln(), m.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(DrmError::InsufficientData { needed: 5, got: pts.len() }.into());
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(DrmError::Degenerate("all points share one k".into()).into());
    }
    Ok(sxy / sxx)
}

/// `n` distinct integers spread evenly in log scale over `[lo, hi]`.
pub fn log_spaced(lo: u64, hi: u64, n: usize) -> Vec<u64> {
    let (a, b) = ((lo.max(1) as f64).ln(), (hi.max(1) as f64).ln());
    let mut out: Vec<u64> = (0..n)
        .map(|i| {
            let t = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
            (a + t * (b - a)).exp().round() as u64
        })
        .collect();
    out.dedup();
    out
}
