//! Minimal hand-written SVG plots.

use std::fmt::Write as _;

use qct_core::calibration::{CalibrationModel, ModelComparison};

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Linear map from data bounds onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let bounds = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let pad = ((hi - lo) * 0.05).max(1e-9);
            (lo - pad, hi + pad)
        };
        let (x0, x1) = bounds(&mut xs.clone());
        let (y0, y1) = bounds(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn header(s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
}

fn axes(s: &mut String, f: &Frame) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let (x, y) = (f.px(fx), f.py(fy));
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{fx:.0}</text>"#,
            b + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.0}</text>"#,
            l - 6.0,
            y + 4.0
        );
    }
}

fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], style: &str) {
    let d: Vec<String> = pts
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
        .collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" {style}/>"#, d.join(" "));
}

/// Scatter of the five calibration points with the fitted line.
pub fn regression_plot(model: &CalibrationModel) -> String {
    let xs = model.points.iter().map(|p| p.0);
    let ys = model.points.iter().map(|p| p.1);
    let f = Frame::new(xs.clone(), ys);
    let mut s = String::new();
    header(
        &mut s,
        &format!(
            "{}: density = {:.4} HU + {:.3}, r = {:.6}",
            model.case_id, model.slope, model.intercept, model.r
        ),
        "Radiodensity (HU)",
        "Density (mg/cm³)",
    );
    axes(&mut s, &f);
    let line = [(f.x0, model.predict(f.x0)), (f.x1, model.predict(f.x1))];
    polyline(&mut s, &f, &line, r#"stroke="steelblue" stroke-width="1.5""#);
    for (x, y) in model.points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="firebrick"/>"#,
            f.px(x),
            f.py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-site median density (solid) and interquartile band (dotted) over HU.
pub fn comparison_plot(cmp: &ModelComparison) -> String {
    let xs = cmp.rows.iter().map(|r| r.hu as f64);
    let ys = cmp
        .rows
        .iter()
        .flat_map(|r| [r.iqr_a.0, r.iqr_a.1, r.iqr_b.0, r.iqr_b.1]);
    let f = Frame::new(xs, ys);
    let mut s = String::new();
    header(&mut s, "Density by site", "Radiodensity (HU)", "Density (mg/cm³)");
    axes(&mut s, &f);
    let series = |get: fn(&qct_core::calibration::ComparisonRow) -> f64| -> Vec<(f64, f64)> {
        cmp.rows.iter().map(|r| (r.hu as f64, get(r))).collect()
    };
    for (color, med, lo, hi) in [
        (
            "firebrick",
            series(|r| r.median_a),
            series(|r| r.iqr_a.0),
            series(|r| r.iqr_a.1),
        ),
        (
            "steelblue",
            series(|r| r.median_b),
            series(|r| r.iqr_b.0),
            series(|r| r.iqr_b.1),
        ),
    ] {
        polyline(&mut s, &f, &med, &format!(r#"stroke="{color}" stroke-width="1.5""#));
        polyline(&mut s, &f, &lo, &format!(r#"stroke="{color}" stroke-dasharray="2,3""#));
        polyline(&mut s, &f, &hi, &format!(r#"stroke="{color}" stroke-dasharray="2,3""#));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" fill="firebrick">Site A</text>"#,
        MARGIN + 10.0,
        MARGIN + 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" fill="steelblue">Site B</text>"#,
        MARGIN + 10.0,
        MARGIN + 26.0
    );
    s.push_str("</svg>\n");
    s
}
