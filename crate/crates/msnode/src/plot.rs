//! Hand-written SVG line plots, one per state variable.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
    /// Draw markers instead of a line.
    pub points: bool,
    pub times: &'a [f64],
    pub values: Vec<f64>,
}

/// Column `i` of a row-major matrix with `n` columns.
pub fn column(rows: &[f64], n: usize, i: usize) -> Vec<f64> {
    rows.chunks_exact(n).map(|r| r[i]).collect()
}

/// One panel: every series against time, with an optional vertical divider
/// (the end of the training window).
pub fn state_plot(title: &str, series: &[Series<'_>], divider: Option<f64>) -> String {
    let finite = |v: &f64| v.is_finite();
    let (mut t0, mut t1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (t, v) in s.times.iter().zip(&s.values).filter(|(_, v)| finite(v)) {
            t0 = t0.min(*t);
            t1 = t1.max(*t);
            y0 = y0.min(*v);
            y1 = y1.max(*v);
        }
    }
    if !(t1 > t0) {
        (t0, t1) = (0.0, 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0.min(0.0) - 1.0, y1.max(0.0) + 1.0);
        if !y0.is_finite() {
            (y0, y1) = (-1.0, 1.0);
        }
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |t: f64| MARGIN + (t - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        title
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{:.3}</text>"#,
            MARGIN - 4.0,
            y + 3.0,
            v
        );
    }
    for (t, anchor) in [(t0, "start"), (t1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">t = {:.3}</text>"#,
            sx(t),
            HEIGHT - MARGIN + 14.0,
            t
        );
    }
    if let Some(d) = divider {
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{:.1}" stroke="#888" stroke-dasharray="2,3"/>"##,
            HEIGHT - MARGIN,
            x = sx(d)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s
            .times
            .iter()
            .zip(&s.values)
            .filter(|(_, v)| finite(v))
            .map(|(t, v)| (sx(*t), sy(*v).clamp(0.0, HEIGHT)))
            .collect();
        if s.points {
            for (x, y) in &pts {
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="{}"/>"#, s.color);
            }
        } else if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if s.dashed { r#" stroke-dasharray="6,3""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                s.color,
                coords.join(" ")
            );
        }
        let ly = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-family="sans-serif" font-size="11" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            s.color,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}
