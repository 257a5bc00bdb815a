//! Trajectory plots as standalone SVG.

use std::fmt::Write as _;

use crate::evaluation::Trajectory;

const WIDTH: f64 = 800.0;
const MARGIN: f64 = 40.0;
const ESTIMATE_COLOR: &str = "#1f77b4";
const GT_COLOR: &str = "#555555";

/// Largest 1, 2 or 5 times a power of ten not above `x`.
fn nice_length(x: f64) -> f64 {
    let p = 10f64.powf(x.log10().floor());
    [5.0, 2.0, 1.0]
        .into_iter()
        .map(|m| m * p)
        .find(|v| *v <= x)
        .unwrap_or(p)
}

/// Estimate (and optional ground truth) in a north-up plot with start and end
/// markers, a legend and a scale bar.
pub fn render_svg(estimate: &Trajectory, ground_truth: Option<&Trajectory>) -> String {
    let all = estimate
        .poses()
        .iter()
        .chain(ground_truth.into_iter().flat_map(|g| g.poses()))
        .map(|p| (p.pose.x, p.pose.y));
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (x, y) in all {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let scale = (WIDTH - 2.0 * MARGIN) / span;
    let height = ((y1 - y0) * scale + 2.0 * MARGIN + 40.0).ceil();
    let px = |x: f64| MARGIN + (x - x0) * scale;
    let py = |y: f64| height - 40.0 - MARGIN - (y - y0) * scale;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let polyline = |s: &mut String, t: &Trajectory, color: &str, dash: &str, id: &str| {
        let pts: Vec<String> = t
            .poses()
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.pose.x), py(p.pose.y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{id}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
    };
    let mut legend = vec![("estimate", ESTIMATE_COLOR)];
    if let Some(gt) = ground_truth {
        polyline(&mut s, gt, GT_COLOR, r#" stroke-dasharray="6 3""#, "ground-truth");
        legend.push(("ground truth", GT_COLOR));
    }
    polyline(&mut s, estimate, ESTIMATE_COLOR, "", "estimate");

    let first = estimate.poses()[0].pose;
    let last = estimate.poses()[estimate.len() - 1].pose;
    let _ = writeln!(
        s,
        r##"<circle id="start" cx="{:.2}" cy="{:.2}" r="5" fill="#2ca02c"/>"##,
        px(first.x),
        py(first.y)
    );
    let _ = writeln!(
        s,
        r##"<rect id="end" x="{:.2}" y="{:.2}" width="9" height="9" fill="#d62728"/>"##,
        px(last.x) - 4.5,
        py(last.y) - 4.5
    );

    let _ = writeln!(s, r#"<g id="legend">"#);
    for (i, (label, color)) in legend.iter().enumerate() {
        let y = 20.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label}</text>"#,
            MARGIN + 24.0,
            MARGIN + 30.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, "</g>");

    let bar_m = nice_length(0.25 * span);
    let bar_px = bar_m * scale;
    let by = height - 20.0;
    let _ = writeln!(
        s,
        r#"<g id="scale-bar"><line x1="{MARGIN}" y1="{by}" x2="{:.2}" y2="{by}" stroke="black" stroke-width="2"/><text x="{MARGIN}" y="{}">{bar_m} m</text></g>"#,
        MARGIN + bar_px,
        by - 6.0
    );
    s.push_str("</svg>\n");
    s
}
