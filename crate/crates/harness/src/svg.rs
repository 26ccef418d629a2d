//! Minimal learning-curve plot: band polygon, mean and median polylines,
//! axis box with min/max tick labels.

use std::fmt::Write;

use crate::stats::AggregateCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

impl Scale {
    fn map(self, v: f64) -> f64 {
        match self {
            Scale::Linear => v,
            Scale::Log => v.log10(),
        }
    }
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub x_scale: Scale,
    pub y_scale: Scale,
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 {
        Some((lo - 0.5, hi + 0.5))
    } else {
        Some((lo, hi))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot<'_> {
    pub fn render(&self, c: &AggregateCurve) -> String {
        let ok = |v: f64| v.is_finite() && (self.y_scale == Scale::Linear || v > 0.0);
        let xs: Vec<f64> = c.k.iter().map(|&k| self.x_scale.map(k.max(1) as f64)).collect();
        let ys = |v: f64| if ok(v) { self.y_scale.map(v) } else { f64::NAN };
        let xr = range(xs.iter().copied());
        let yr = range(c.lower.iter().chain(&c.upper).chain(&c.mean).map(|&v| ys(v)));

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(self.title));
        let (x0, x1, y0, y1) = (PAD, W - PAD / 2.0, H - PAD, PAD / 1.5);
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
        let (Some((xa, xb)), Some((ya, yb))) = (xr, yr) else {
            s.push_str("</svg>\n");
            return s;
        };
        let px = |x: f64| x0 + (x - xa) / (xb - xa) * (x1 - x0);
        let py = |y: f64| y0 - (y - ya) / (yb - ya) * (y0 - y1);
        let label = |v: f64, scale: Scale| match scale {
            Scale::Linear => format!("{v:.3}"),
            Scale::Log => format!("1e{v:.1}"),
        };
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="start">{}</text>"#, y0 + 16.0, label(xa, self.x_scale));
        let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, y0 + 16.0, label(xb, self.x_scale));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#, (x0 + x1) / 2.0, H - 12.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y0}" text-anchor="end">{}</text>"#, x0 - 4.0, label(ya, self.y_scale));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y1 + 10.0, label(yb, self.y_scale));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(self.y_label)
        );

        let pts = |col: &[f64]| -> Vec<(f64, f64)> {
            xs.iter()
                .zip(col)
                .filter(|(_, &v)| ok(v))
                .map(|(&x, &v)| (px(x), py(ys(v))))
                .collect()
        };
        let path = |p: &[(f64, f64)]| p.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ");

        let mut band = pts(&c.upper);
        let mut low = pts(&c.lower);
        low.reverse();
        band.extend(low);
        if band.len() > 2 {
            let _ = writeln!(s, r##"<polygon points="{}" fill="#4477aa" fill-opacity="0.25" stroke="none"/>"##, path(&band));
        }
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#4477aa" stroke-width="2"/>"##, path(&pts(&c.mean)));
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#cc6677" stroke-width="1.5" stroke-dasharray="4 3"/>"##,
            path(&pts(&c.median))
        );
        let _ = writeln!(s, r##"<text x="{}" y="{}" fill="#4477aa">mean</text>"##, x1 - 90.0, y1 + 16.0);
        let _ = writeln!(s, r##"<text x="{}" y="{}" fill="#cc6677">median</text>"##, x1 - 50.0, y1 + 16.0);
        s.push_str("</svg>\n");
        s
    }
}
