//! Minimal hand-written SVG charts. Every chart the CLI draws also has a CSV
//! twin with the same numbers.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#ad494a",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
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

/// Scatter plot of `(x, y, group)` points, one color per group.
pub fn scatter(points: &[(f64, f64, usize)], title: &str, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    axes(&mut out, title, x_label, y_label);
    for &(x, y, g) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            sx(x),
            sy(y),
            PALETTE[g % PALETTE.len()]
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{:.0}" fill="gray">x: [{x0:.3}, {x1:.3}]  y: [{y0:.3}, {y1:.3}]</text>"#,
        HEIGHT - 12.0
    );
    out.push_str("</svg>\n");
    out
}

fn axes(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.0}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.0}" y="{:.0}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 28.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.0}" text-anchor="middle" transform="rotate(-90 16 {:.0})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

/// One bar with an error whisker.
#[derive(Debug, Clone)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub error: f64,
}

/// A titled set of bars drawn side by side.
#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub bars: Vec<Bar>,
}

/// Panels laid out horizontally; each has its own y scale starting at zero.
pub fn bar_panels(panels: &[Panel], title: &str) -> String {
    let panel_w = 320.0;
    let width = panel_w * panels.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, width, HEIGHT);
    let _ = writeln!(
        out,
        r#"<text x="{:.0}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (pi, panel) in panels.iter().enumerate() {
        let left = pi as f64 * panel_w + MARGIN;
        let right = (pi + 1) as f64 * panel_w - 16.0;
        let top = MARGIN;
        let bottom = HEIGHT - MARGIN;
        let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
        let top_value = panel
            .bars
            .iter()
            .map(|b| finite(b.value) + finite(b.error))
            .fold(0.0_f64, f64::max)
            .max(1e-9)
            * 1.1;
        let sy = |v: f64| bottom - finite(v).max(0.0) / top_value * (bottom - top);
        let _ = writeln!(out, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>"#);
        let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.0}" y="{:.0}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            top - 8.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.0}" y="{:.0}" text-anchor="end">{:.3}</text>"#,
            left - 4.0,
            top + 4.0,
            top_value
        );
        let slot = (right - left) / panel.bars.len().max(1) as f64;
        for (bi, bar) in panel.bars.iter().enumerate() {
            let x = left + bi as f64 * slot + 0.2 * slot;
            let w = 0.6 * slot;
            let y = sy(bar.value);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
                bottom - y,
                PALETTE[bi % PALETTE.len()]
            );
            let cx = x + w / 2.0;
            let (lo, hi) = (sy(bar.value - bar.error), sy(bar.value + bar.error));
            let _ = writeln!(out, r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="black"/>"#);
            let _ = writeln!(
                out,
                r#"<text x="{cx:.2}" y="{:.0}" text-anchor="middle">{}</text>"#,
                bottom + 16.0,
                escape(&bar.label)
            );
            let value = if bar.value.is_finite() {
                format!("{:.3}", bar.value)
            } else {
                "n/a".to_string()
            };
            let _ = writeln!(
                out,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="10">{value}</text>"#,
                hi - 4.0
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_draws_every_point() {
        let svg = scatter(&[(0.0, 0.0, 0), (1.0, 2.0, 1), (2.0, 1.0, 1)], "a & b", "x", "y");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &amp; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn bars_survive_nan() {
        let svg = bar_panels(
            &[Panel {
                title: "R²".into(),
                bars: vec![Bar {
                    label: "all".into(),
                    value: f64::NAN,
                    error: f64::NAN,
                }],
            }],
            "t",
        );
        assert!(!svg.contains("NaN"));
    }
}
