//! Distortion functions, quantile-level grids and concave envelopes.
//!
//! A distortion function `w: [0,1] -> [0,1]` is non-decreasing with
//! `w(0) = 0` and `w(1) = 1`. The risk measure it induces is
//! `J = ∫ F⁻¹(1 − z) dw(z) = −∫ F⁻¹(z) dw̃(z)` with `w̃(z) = w(1 − z)`.
//!
//! Step components are right-open indicators `1{z > c}`, so every
//! distortion here is left-continuous at its jumps.

use std::fmt;
use std::str::FromStr;

use crate::error::{domain, DrmError, Result};
use crate::normal;

/// Two abscissae closer than this are treated as the same point when
/// deciding whether a derivative is requested at a jump.
pub const JUMP_TOL: f64 = 1e-12;

/// The supported distortion families.
#[derive(Debug, Clone, PartialEq)]
pub enum DistortionKind {
    /// `1{z > 1 − α}`.
    Var(f64),
    /// `min(z / (1 − α), 1)`.
    Cvar(f64),
    /// `Φ(Φ⁻¹(z) − α)`.
    Wang(f64),
    /// Logistic S-shape `(e^{2αz} − 1) / ((e^α − 1)(e^{2αz−α} + 1))`.
    SShape(f64),
    /// Prospect-theory weighting `z^α / (z^α + (1 − z)^α)^{1/α}`.
    Cpt(f64),
    /// `0.8·SShape(α) + (1{z>0.3} + 1{z>0.5} + 1{z>0.7}) / 15`.
    DiscontinuousComposite(f64),
    /// Continuous piecewise-linear interpolation of a table.
    PiecewiseLinear(PiecewiseLinear),
}

/// A distortion function together with its jump set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionFn {
    kind: DistortionKind,
    jump_levels: Vec<f64>,
}

const COMPOSITE_JUMPS: [f64; 3] = [0.3, 0.5, 0.7];

impl DistortionFn {
    pub fn new(kind: DistortionKind) -> Result<Self> {
        let jump_levels = match &kind {
            DistortionKind::Var(a) => {
                check_open_unit("alpha", *a)?;
                vec![1.0 - a]
            }
            DistortionKind::Cvar(a) => {
                if !(0.0..1.0).contains(a) {
                    return Err(domain("alpha", *a, "[0, 1)"));
                }
                Vec::new()
            }
            DistortionKind::Wang(a) => {
                if !a.is_finite() {
                    return Err(domain("alpha", *a, "finite"));
                }
                Vec::new()
            }
            DistortionKind::SShape(a) | DistortionKind::Cpt(a) => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(domain("alpha", *a, "(0, ∞)"));
                }
                Vec::new()
            }
            DistortionKind::DiscontinuousComposite(a) => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(domain("alpha", *a, "(0, ∞)"));
                }
                COMPOSITE_JUMPS.to_vec()
            }
            DistortionKind::PiecewiseLinear(_) => Vec::new(),
        };
        Ok(Self { kind, jump_levels })
    }

    pub fn var(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::Var(alpha))
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::Cvar(alpha))
    }

    pub fn wang(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::Wang(alpha))
    }

    pub fn sshape(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::SShape(alpha))
    }

    pub fn cpt(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::Cpt(alpha))
    }

    pub fn discontinuous(alpha: f64) -> Result<Self> {
        Self::new(DistortionKind::DiscontinuousComposite(alpha))
    }

    /// The risk-neutral distortion `w(z) = z`.
    pub fn identity() -> Self {
        let table = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 1.0)])
            .expect("identity table is valid");
        Self {
            kind: DistortionKind::PiecewiseLinear(table),
            jump_levels: Vec::new(),
        }
    }

    pub fn from_table(table: PiecewiseLinear) -> Self {
        Self {
            kind: DistortionKind::PiecewiseLinear(table),
            jump_levels: Vec::new(),
        }
    }

    pub fn kind(&self) -> &DistortionKind {
        &self.kind
    }

    /// Sorted points in (0, 1) where `w` is discontinuous.
    pub fn jump_levels(&self) -> &[f64] {
        &self.jump_levels
    }

    pub fn is_smooth(&self) -> bool {
        self.jump_levels.is_empty() && !matches!(self.kind, DistortionKind::Var(_))
    }

    /// `w(z)` for `z ∈ [0, 1]`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(domain("z", z, "[0, 1]"));
        }
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z >= 1.0 {
            return 1.0;
        }
        match &self.kind {
            DistortionKind::Var(a) => indicator(z > 1.0 - a),
            DistortionKind::Cvar(a) => (z / (1.0 - a)).min(1.0),
            DistortionKind::Wang(a) => normal::cdf(normal::quantile(z) - a),
            DistortionKind::SShape(a) => sshape(z, *a),
            DistortionKind::Cpt(a) => {
                let p = z.powf(*a);
                let q = (1.0 - z).powf(*a);
                p / (p + q).powf(1.0 / a)
            }
            DistortionKind::DiscontinuousComposite(a) => {
                let steps: f64 = COMPOSITE_JUMPS.iter().map(|&c| indicator(z > c)).sum();
                0.8 * sshape(z, *a) + steps / 15.0
            }
            DistortionKind::PiecewiseLinear(t) => t.eval(z),
        }
    }

    /// `w′(z)` for `z ∈ (0, 1)` away from the jump set.
    ///
    /// At the CVaR kink and at table knots the left derivative is returned.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        if !(z > 0.0 && z < 1.0) {
            return Err(domain("z", z, "(0, 1)"));
        }
        if matches!(self.kind, DistortionKind::Var(_))
            || self.jump_levels.iter().any(|c| (z - c).abs() <= JUMP_TOL)
        {
            return Err(DrmError::NonDifferentiable {
                kind: self.to_string(),
                z,
            });
        }
        Ok(match &self.kind {
            DistortionKind::Var(_) => unreachable!(),
            DistortionKind::Cvar(a) => {
                if z <= 1.0 - a {
                    1.0 / (1.0 - a)
                } else {
                    0.0
                }
            }
            DistortionKind::Wang(a) => {
                let x = normal::quantile(z);
                normal::pdf(x - a) / normal::pdf(x)
            }
            DistortionKind::SShape(a) => sshape_derivative(z, *a),
            DistortionKind::Cpt(a) => {
                let p = z.powf(*a);
                let q = (1.0 - z).powf(*a);
                let s = p + q;
                let w = p / s.powf(1.0 / a);
                w * (a / z - (z.powf(a - 1.0) - (1.0 - z).powf(a - 1.0)) / s)
            }
            DistortionKind::DiscontinuousComposite(a) => 0.8 * sshape_derivative(z, *a),
            DistortionKind::PiecewiseLinear(t) => t.left_slope(z),
        })
    }

    /// `w′(1 − z)`, i.e. `−w̃′(z)`: the weight of the quantile-function form.
    pub fn reflected_derivative(&self, z: f64) -> Result<f64> {
        self.derivative(1.0 - z)
    }
}

fn check_open_unit(name: &'static str, a: f64) -> Result<()> {
    if a > 0.0 && a < 1.0 {
        Ok(())
    } else {
        Err(domain(name, a, "(0, 1)"))
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn sshape(z: f64, a: f64) -> f64 {
    let u = (2.0 * a * z).exp();
    (u - 1.0) / (a.exp_m1() * (u * (-a).exp() + 1.0))
}

fn sshape_derivative(z: f64, a: f64) -> f64 {
    let u = (2.0 * a * z).exp();
    let e = (-a).exp();
    let denom = u * e + 1.0;
    2.0 * a * u * (1.0 + e) / (a.exp_m1() * denom * denom)
}

impl fmt::Display for DistortionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DistortionKind::Var(a) => write!(f, "var:{a}"),
            DistortionKind::Cvar(a) => write!(f, "cvar:{a}"),
            DistortionKind::Wang(a) => write!(f, "wang:{a}"),
            DistortionKind::SShape(a) => write!(f, "sshape:{a}"),
            DistortionKind::Cpt(a) => write!(f, "cpt:{a}"),
            DistortionKind::DiscontinuousComposite(a) => write!(f, "disc:{a}"),
            DistortionKind::PiecewiseLinear(t) if t.is_identity() => write!(f, "mean"),
            DistortionKind::PiecewiseLinear(t) => {
                write!(f, "table:")?;
                for (i, (x, y)) in t.knots().iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{x}/{y}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for DistortionFn {
    type Err = DrmError;

    /// Parses `cvar:0.7`, `wang:-0.85`, `sshape:5`, `cpt:0.7`, `disc:5`,
    /// `var:0.7`, `mean`, or `table:x0/y0;x1/y1;...`.
    fn from_str(s: &str) -> Result<Self> {
        let parse_err = |reason: String| DrmError::Parse {
            what: "distortion",
            input: s.to_string(),
            reason,
        };
        let s_trim = s.trim();
        if s_trim.eq_ignore_ascii_case("mean") {
            return Ok(Self::identity());
        }
        let (name, arg) = s_trim
            .split_once(':')
            .ok_or_else(|| parse_err("expected <kind>:<parameter>".into()))?;
        let name = name.trim().to_ascii_lowercase();
        if name == "table" {
            let mut knots = Vec::new();
            for pair in arg.split(';') {
                let (x, y) = pair
                    .split_once('/')
                    .ok_or_else(|| parse_err(format!("bad knot {pair:?}")))?;
                let x: f64 = x.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
                let y: f64 = y.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
                knots.push((x, y));
            }
            return PiecewiseLinear::new(knots).map(Self::from_table);
        }
        let alpha: f64 = arg
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("parameter: {e}")))?;
        let kind = match name.as_str() {
            "var" => DistortionKind::Var(alpha),
            "cvar" => DistortionKind::Cvar(alpha),
            "wang" => DistortionKind::Wang(alpha),
            "sshape" | "s-shape" => DistortionKind::SShape(alpha),
            "cpt" => DistortionKind::Cpt(alpha),
            "disc" | "discontinuous" => DistortionKind::DiscontinuousComposite(alpha),
            other => return Err(parse_err(format!("unknown kind {other:?}"))),
        };
        Self::new(kind)
    }
}

/// A continuous, non-decreasing piecewise-linear function on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    /// Knots must start at (0, 0), end at (1, 1), and be strictly
    /// increasing in x and non-decreasing in y.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(DrmError::Config("table needs at least two knots".into()));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
        if xs[0] != 0.0 || ys[0] != 0.0 || *xs.last().unwrap() != 1.0 || *ys.last().unwrap() != 1.0
        {
            return Err(DrmError::Config(
                "table must start at (0,0) and end at (1,1)".into(),
            ));
        }
        for i in 1..xs.len() {
            if !(xs[i] > xs[i - 1]) {
                return Err(DrmError::Config("table x must be strictly increasing".into()));
            }
            if ys[i] < ys[i - 1] {
                return Err(DrmError::Config("table y must be non-decreasing".into()));
            }
        }
        Ok(Self { xs, ys })
    }

    pub(crate) fn from_hull(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Self { xs, ys }
    }

    pub fn knots(&self) -> Vec<(f64, f64)> {
        self.xs.iter().copied().zip(self.ys.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn is_identity(&self) -> bool {
        self.xs == [0.0, 1.0] && self.ys == [0.0, 1.0]
    }

    /// Index `s` of the segment `[x_s, x_{s+1}]` that owns `z` from the left:
    /// a knot belongs to the segment ending at it.
    fn left_segment(&self, z: f64) -> usize {
        let n = self.xs.len();
        // first knot index with x >= z
        let idx = self.xs.partition_point(|&x| x < z);
        idx.clamp(1, n - 1) - 1
    }

    fn right_segment(&self, z: f64) -> usize {
        let n = self.xs.len();
        let idx = self.xs.partition_point(|&x| x <= z);
        idx.clamp(1, n - 1) - 1
    }

    pub fn segment_slope(&self, s: usize) -> f64 {
        (self.ys[s + 1] - self.ys[s]) / (self.xs[s + 1] - self.xs[s])
    }

    pub fn eval(&self, z: f64) -> f64 {
        let s = self.left_segment(z);
        let t = (z - self.xs[s]) / (self.xs[s + 1] - self.xs[s]);
        self.ys[s] + t * (self.ys[s + 1] - self.ys[s])
    }

    /// Slope of the segment to the left of `z` (right slope at `z = 0`).
    pub fn left_slope(&self, z: f64) -> f64 {
        self.segment_slope(self.left_segment(z))
    }

    /// Slope of the segment to the right of `z` (left slope at `z = 1`).
    pub fn right_slope(&self, z: f64) -> f64 {
        self.segment_slope(self.right_segment(z))
    }

    /// Iterator over `(x_start, x_end, slope)` for every segment.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.xs.len() - 1).map(move |s| (self.xs[s], self.xs[s + 1], self.segment_slope(s)))
    }
}

/// Default sampling resolution for [`concave_envelope`].
pub const DEFAULT_ENVELOPE_RESOLUTION: usize = 100_000;

/// Least concave majorant of `w` on [0, 1], as the upper convex hull of
/// the sampled graph `{(k/r, w(k/r))}` (monotone-chain construction).
pub fn concave_envelope(w: &DistortionFn, resolution: usize) -> Result<PiecewiseLinear> {
    if resolution < 2 {
        return Err(domain("resolution", resolution as f64, ">= 2"));
    }
    let mut hx: Vec<f64> = Vec::new();
    let mut hy: Vec<f64> = Vec::new();
    for k in 0..=resolution {
        let x = k as f64 / resolution as f64;
        let y = w.eval_unchecked(x);
        while hx.len() >= 2 {
            let n = hx.len();
            let (x1, y1, x2, y2) = (hx[n - 2], hy[n - 2], hx[n - 1], hy[n - 1]);
            // keep only strict right turns (clockwise) for the upper hull
            let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
            if cross >= 0.0 {
                hx.pop();
                hy.pop();
            } else {
                break;
            }
        }
        hx.push(x);
        hy.push(y);
    }
    Ok(PiecewiseLinear::from_hull(hx, hy))
}

/// Where the integration weights of a cell are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalRule {
    /// `z̃_i = (z_{i-1} + z_i) / 2`.
    #[default]
    Midpoint,
    /// `z̃_i = z_i`.
    Right,
}

/// Ordered quantile levels `0 < z_0 < … < z_N < 1` with one evaluation
/// point per interval `[z_{i-1}, z_i]`, `i = 1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    levels: Vec<f64>,
    eval_points: Vec<f64>,
    rule: EvalRule,
}

impl Grid {
    pub fn new(levels: Vec<f64>, rule: EvalRule) -> Result<Self> {
        if levels.is_empty() {
            return Err(DrmError::Config("grid needs at least one level".into()));
        }
        for (i, &z) in levels.iter().enumerate() {
            if !(z > 0.0 && z < 1.0) {
                return Err(domain("grid level", z, "(0, 1)"));
            }
            if i > 0 && !(z > levels[i - 1]) {
                return Err(DrmError::Config("grid levels must be strictly increasing".into()));
            }
        }
        let eval_points = levels
            .windows(2)
            .map(|p| match rule {
                EvalRule::Midpoint => 0.5 * (p[0] + p[1]),
                EvalRule::Right => p[1],
            })
            .collect();
        Ok(Self {
            levels,
            eval_points,
            rule,
        })
    }

    /// `z_i = (i + 1)/(N + 2)` for `i = 0..=N`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::uniform_with(n, EvalRule::Midpoint)
    }

    pub fn uniform_with(n: usize, rule: EvalRule) -> Result<Self> {
        if n < 1 {
            return Err(domain("N", n as f64, ">= 1"));
        }
        let denom = (n + 2) as f64;
        Self::new((0..=n).map(|i| (i + 1) as f64 / denom).collect(), rule)
    }

    /// `z_i = √(i/M)` for `i = 1..M−1`; denser towards 1.
    pub fn sqrt(m: usize) -> Result<Self> {
        Self::sqrt_with(m, EvalRule::Midpoint)
    }

    pub fn sqrt_with(m: usize, rule: EvalRule) -> Result<Self> {
        if m < 2 {
            return Err(domain("M", m as f64, ">= 2"));
        }
        Self::new((1..m).map(|i| (i as f64 / m as f64).sqrt()).collect(), rule)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// `z̃_1..z̃_N`.
    pub fn eval_points(&self) -> &[f64] {
        &self.eval_points
    }

    pub fn rule(&self) -> EvalRule {
        self.rule
    }

    /// Number of intervals `N`.
    pub fn n_intervals(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn with_rule(&self, rule: EvalRule) -> Self {
        Self::new(self.levels.clone(), rule).expect("levels already validated")
    }
}

/// `Δw̃_i = w(1 − z_i) − w(1 − z_{i−1})` for `i = 1..N`.
pub fn weights(w: &DistortionFn, g: &Grid) -> Vec<f64> {
    g.levels
        .windows(2)
        .map(|p| w.eval_unchecked(1.0 - p[1]) - w.eval_unchecked(1.0 - p[0]))
        .collect()
}

/// Split the intervals `1..=N` into those whose weight `Δw̃_i` absorbs a
/// jump of `w` and the rest.
///
/// A jump `1{x > c}` is absorbed by interval `i` exactly when
/// `1 − z_i ≤ c < 1 − z_{i−1}`, evaluated with the same arithmetic as
/// [`weights`], so each jump inside the grid lands in exactly one interval.
pub fn jump_partition(w: &DistortionFn, g: &Grid) -> (Vec<usize>, Vec<usize>) {
    let mut jump = Vec::new();
    let mut smooth = Vec::new();
    for i in 1..=g.n_intervals() {
        let lo = 1.0 - g.levels[i];
        let hi = 1.0 - g.levels[i - 1];
        if w.jump_levels.iter().any(|&c| lo <= c && c < hi) {
            jump.push(i);
        } else {
            smooth.push(i);
        }
    }
    (jump, smooth)
}
