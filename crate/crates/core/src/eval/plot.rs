//! Minimal SVG scatter plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::bench::{BenchRecord, Method};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#, sx(xv), b + 18.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#, l - 6.0, sy(yv) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
    for (k, ser) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}" fill-opacity="0.7"/>"#, sx(x), sy(y));
        }
        let ly = t + 16.0 * k as f64;
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}"/>"#, r - 80.0, ly);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, r - 70.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `mde_vs_visible_ratio.svg` and `mde_vs_initial_error.svg`, one
/// series per method, from successful records.
pub fn render_plots(records: &[BenchRecord], dir: &Path) -> Result<()> {
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let series = |x: fn(&BenchRecord) -> Option<f64>| -> Vec<Series> {
        methods
            .iter()
            .map(|&m| Series {
                name: m.name().into(),
                points: records
                    .iter()
                    .filter(|r| r.method == m && r.ok())
                    .filter_map(|r| Some((x(r)?, r.mde_mm?)))
                    .collect(),
            })
            .collect()
    };
    let plots = [
        (
            "mde_vs_visible_ratio.svg",
            "MDE against visible points ratio",
            "visible ratio",
            series(|r| Some(r.visible_ratio)),
        ),
        (
            "mde_vs_initial_error.svg",
            "MDE against initial rigid error",
            "initial rigid Chamfer [mm]",
            series(|r| r.init_rigid_chamfer_mm),
        ),
    ];
    for (file, title, xlabel, s) in plots {
        let path = dir.join(file);
        fs::write(&path, scatter_svg(title, xlabel, "MDE [mm]", &s)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_marker_per_point_plus_legend() {
        let s = vec![
            Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] },
            Series { name: "b<c".into(), points: vec![(0.5, 0.5)] },
        ];
        let svg = scatter_svg("t", "x", "y", &s);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3 + 2);
        assert!(svg.contains("b&lt;c"));
    }

    #[test]
    fn empty_series_still_renders() {
        let svg = scatter_svg("t", "x", "y", &[]);
        assert!(svg.ends_with("</svg>\n"));
    }
}
