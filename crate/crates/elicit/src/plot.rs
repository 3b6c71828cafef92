//! Static SVG line charts of experiment summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::bench::SummaryRow;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    Linf,
    KLambdaMin,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            "k_lambda_min" => Ok(Metric::KLambdaMin),
            _ => Err(invalid(format!("unknown metric `{s}` (l2, linf, k_lambda_min)"))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::L2 => "mean l2 error",
            Metric::Linf => "mean linf error",
            Metric::KLambdaMin => "mean K * lambda_min",
        }
    }

    fn of(self, r: &SummaryRow) -> f64 {
        match self {
            Metric::L2 => r.mean_l2,
            Metric::Linf => r.mean_linf,
            Metric::KLambdaMin => r.mean_k_lambda_min,
        }
    }
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Mean of `metric` against K on a log axis, one polyline per arm.
pub fn render_svg(rows: &[SummaryRow], metric: Metric, title: &str) -> Result<String> {
    let pts: Vec<(&str, f64, f64)> = rows
        .iter()
        .map(|r| (r.arm.as_str(), r.k as f64, metric.of(r)))
        .filter(|(_, _, v)| v.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(invalid("nothing to plot"));
    }
    let mut arms: Vec<&str> = Vec::new();
    for (a, _, _) in &pts {
        if !arms.contains(a) {
            arms.push(a);
        }
    }
    let (kmin, kmax) = pts.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let ymax = pts.iter().map(|p| p.2).fold(0.0_f64, f64::max) * 1.05;
    let ymax = if ymax > 0.0 { ymax } else { 1.0 };
    let (lx0, lx1) = (kmin.ln(), if kmax > kmin { kmax.ln() } else { kmin.ln() + 1.0 });
    let px = |k: f64| LEFT + (k.ln() - lx0) / (lx1 - lx0) * (W - LEFT - RIGHT);
    let py = |v: f64| H - BOTTOM - v / ymax * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, (W - RIGHT + LEFT) / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, x0 - 6.0, y + 4.0);
    }
    let mut ks: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    for k in &ks {
        let x = px(*k);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle" font-size="10">{k}</text>"#, y0 + 4.0, y0 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">queries K (log scale)</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#, (y0 + y1) / 2.0, metric.label());
    for (i, arm) in arms.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut line: Vec<(f64, f64)> = pts.iter().filter(|p| p.0 == *arm).map(|p| (p.1, p.2)).collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let d: Vec<String> = line.iter().map(|(k, v)| format!("{:.1},{:.1}", px(*k), py(*v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, d.join(" "));
        for (k, v) in &line {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(*k), py(*v));
        }
        let ly = TOP + 20.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#, x1 + 12.0, x1 + 36.0, x1 + 42.0, ly + 4.0, escape(arm));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
