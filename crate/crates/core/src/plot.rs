//! Minimal SVG log-log plots of sweep reports.

use crate::experiment_harness::{FitStatus, ScalingReport};
use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 480.0;
const PAD: f64 = 64.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    /// (x, y, y error); non-positive y are skipped.
    pub points: Vec<(f64, f64, f64)>,
    /// log y = intercept + slope log x.
    pub fit: Option<(f64, f64)>,
    /// Reference slope drawn through the first point.
    pub target_slope: Option<f64>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn loglog_svg(title: &str, series: &[Series]) -> String {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.log10(), p.1.log10())).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor();
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
        y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
        y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |lx: f64| PAD + (lx - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |ly: f64| H - PAD - (ly - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for d in x0 as i32..=x1 as i32 {
        let x = sx(d as f64);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/>"#, H - PAD, H - PAD + 6.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">1e{d}</text>"#, H - PAD + 20.0);
    }
    for d in y0 as i32..=y1 as i32 {
        let y = sy(d as f64);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{PAD}" y2="{y:.1}" stroke="black"/>"#, PAD - 6.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{d}</text>"#, PAD - 8.0, y + 4.0);
    }
    let clip = |ly: f64| ly.clamp(y0, y1);
    for (i, se) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let good: Vec<&(f64, f64, f64)> = se.points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
        let poly: Vec<String> = good.iter().map(|p| format!("{:.1},{:.1}", sx(p.0.log10()), sy(p.1.log10()))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, poly.join(" "));
        for p in &good {
            let (x, y) = (sx(p.0.log10()), sy(p.1.log10()));
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{c}"/>"#);
            if p.2 > 0.0 {
                let lo = if p.1 > p.2 { clip((p.1 - p.2).log10()) } else { y0 };
                let hi = clip((p.1 + p.2).log10());
                let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}"/>"#, sy(lo), sy(hi));
            }
        }
        let (xa, xb) = match (good.first(), good.last()) {
            (Some(a), Some(b)) => (a.0, b.0),
            _ => continue,
        };
        if let Some((icpt, slope)) = se.fit {
            let f = |x: f64| (icpt + slope * x.ln()) / std::f64::consts::LN_10;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{c}" stroke-dasharray="6,3"/>"#,
                sx(xa.log10()),
                sy(clip(f(xa))),
                sx(xb.log10()),
                sy(clip(f(xb)))
            );
        }
        if let Some(t) = se.target_slope {
            let ya = good[0].1.log10();
            let yb = ya + t * (xb.log10() - xa.log10());
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
                sx(xa.log10()),
                sy(clip(ya)),
                sx(xb.log10()),
                sy(clip(yb))
            );
        }
        let label = match se.fit {
            Some((_, slope)) => format!("{} (slope {slope:.3})", se.label),
            None => se.label.clone(),
        };
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}" fill="{c}" text-anchor="end">{}</text>"#, W - PAD - 8.0, esc(&label));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">width n</text>"#, W / 2.0, H - 16.0);
    s.push_str("</svg>\n");
    s
}

/// One series per metric, with its fitted line and target slope.
pub fn report_svg(report: &ScalingReport) -> String {
    let series: Vec<Series> = report
        .fits
        .iter()
        .map(|f| Series {
            label: f.metric.name(),
            points: report.points_for(f.metric).iter().map(|p| (p.width as f64, p.estimate, p.std_error)).collect(),
            fit: match (f.fit.status, f.fit.intercept, f.fit.slope) {
                (FitStatus::Ok, Some(i), Some(s)) => Some((i, s)),
                _ => None,
            },
            target_slope: f.target.map(|t| t.exponent),
        })
        .collect();
    loglog_svg("scaling with width", &series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_one_polyline_per_series() {
        let s = Series { label: "a<b".into(), points: vec![(10.0, 0.1, 0.01), (100.0, 0.01, 0.0)], fit: Some((0.0, -1.0)), target_slope: Some(-1.0) };
        let svg = loglog_svg("t", &[s.clone(), Series { label: "b".into(), ..s }]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
