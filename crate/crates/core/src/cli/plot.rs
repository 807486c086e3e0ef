//! Learning-curve SVG: nrmse against augmented-set size on a log axis, one
//! series per scale factor. Output bytes depend only on the points.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::LearningCurvePoint;

/// Horizontal reference line on the nrmse axis.
pub const GUIDE_NRMSE: f64 = 0.2;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Points grouped by scale factor, in first-seen order, each sorted by size.
fn series(points: &[LearningCurvePoint]) -> Vec<(f64, Vec<(f64, f64)>)> {
    let mut out: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for p in points {
        let xy = (p.n_points as f64, p.metrics.nrmse);
        match out.iter_mut().find(|(s, _)| *s == p.scale_factor) {
            Some((_, v)) => v.push(xy),
            None => out.push((p.scale_factor, vec![xy])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

pub fn render_curve_svg(points: &[LearningCurvePoint]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::invalid("cannot plot an empty learning curve"));
    }
    let groups = series(points);
    let finite = || groups.iter().flat_map(|(_, v)| v.iter()).filter(|(_, y)| y.is_finite());

    let lx = |n: f64| n.max(1.0).log10();
    let x_lo = finite().map(|(x, _)| lx(*x)).fold(f64::INFINITY, f64::min);
    let x_hi = finite().map(|(x, _)| lx(*x)).fold(f64::NEG_INFINITY, f64::max);
    let (x_lo, x_hi) = if x_lo.is_finite() { (x_lo.floor(), x_hi.ceil().max(x_lo.floor() + 1.0)) } else { (0.0, 1.0) };
    let y_max = finite().map(|(_, y)| *y).fold(GUIDE_NRMSE, f64::max);
    let y_hi = (y_max * 1.1 * 10.0).ceil() / 10.0;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |n: f64| LEFT + (lx(n) - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| TOP + (1.0 - y / y_hi) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#).unwrap();

    for decade in (x_lo as i32)..=(x_hi as i32) {
        let x = px(10f64.powi(decade));
        writeln!(w, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + plot_h, TOP + plot_h + 5.0).unwrap();
        writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{decade}</text>"#, TOP + plot_h + 19.0).unwrap();
    }
    let ticks = 5;
    for t in 0..=ticks {
        let v = y_hi * t as f64 / ticks as f64;
        let y = py(v);
        writeln!(w, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, LEFT - 8.0, y + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">augmented points (log scale)</text>"#, LEFT + plot_w / 2.0, HEIGHT - 12.0).unwrap();
    writeln!(w, r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">normalized CV-RMSE (RMSE/sigma)</text>"#, TOP + plot_h / 2.0).unwrap();

    let gy = py(GUIDE_NRMSE);
    writeln!(w, r##"<line class="guide" x1="{LEFT}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#555555" stroke-dasharray="6 4"/>"##, LEFT + plot_w).unwrap();
    writeln!(w, r##"<text x="{:.2}" y="{:.2}" fill="#555555">{GUIDE_NRMSE}</text>"##, LEFT + 4.0, gy - 4.0).unwrap();

    for (i, (s, pts)) in groups.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let shown: Vec<(f64, f64)> = pts.iter().filter(|(_, y)| y.is_finite()).map(|&(x, y)| (px(x), py(y))).collect();
        writeln!(w, r#"<g class="series" data-scale-factor="{s}">"#).unwrap();
        if shown.len() > 1 {
            let path: Vec<String> = shown.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" ")).unwrap();
        }
        for (x, y) in &shown {
            writeln!(w, r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#).unwrap();
        }
        writeln!(w, "</g>").unwrap();
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx0 = WIDTH - RIGHT + 15.0;
        writeln!(w, r#"<line x1="{lx0:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx0 + 20.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}">s = {s}</text>"#, lx0 + 26.0, ly + 4.0).unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

pub fn emit_curve_plot(points: &[LearningCurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_curve_svg(points)?).map_err(|e| Error::io(path, e))
}
