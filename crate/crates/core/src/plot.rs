//! Minimal static SVG renderings of the report artifacts: box-plot panels
//! and per-cycle joint-angle overlays.
//!
//! Every box element carries its statistics in data attributes (data units,
//! 4-decimal precision), so plots stay diffable and testable without pixel
//! inspection.

use std::fmt::Write as _;

use crate::report::{fmt4, BoxPanel};

const PLOT_HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 48.0;
const MARGIN_RIGHT: f64 = 24.0;
const SLOT_WIDTH: f64 = 110.0;
const BOX_WIDTH: f64 = 60.0;

fn px(v: f64) -> String {
    format!("{v:.2}")
}

struct YScale {
    min: f64,
    max: f64,
}

impl YScale {
    fn new(lo: f64, hi: f64) -> YScale {
        let span = (hi - lo).max(1e-9);
        let pad = (0.1 * span).max(0.5);
        YScale {
            min: lo - pad,
            max: hi + pad,
        }
    }

    fn to_px(&self, v: f64) -> f64 {
        MARGIN_TOP + (self.max - v) / (self.max - self.min) * PLOT_HEIGHT
    }
}

fn svg_header(width: f64, height: f64, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = px(width),
        h = px(height),
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        x = px(width / 2.0),
    );
    out
}

fn y_axis(out: &mut String, scale: &YScale, label: &str) {
    let x = MARGIN_LEFT;
    let _ = writeln!(
        out,
        r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="black"/>"#,
        x = px(x),
        y1 = px(MARGIN_TOP),
        y2 = px(MARGIN_TOP + PLOT_HEIGHT),
    );
    for k in 0..=4 {
        let v = scale.min + (scale.max - scale.min) * k as f64 / 4.0;
        let y = scale.to_px(v);
        let _ = writeln!(
            out,
            r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
            x1 = px(x - 4.0),
            x2 = px(x),
            y = px(y),
        );
        let _ = writeln!(
            out,
            r#"<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.1}</text>"#,
            tx = px(x - 7.0),
            ty = px(y + 4.0),
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {y})">{label}</text>"#,
        y = px(MARGIN_TOP + PLOT_HEIGHT / 2.0),
    );
}

/// Renders one box-plot panel; boxes appear in the order given (the report
/// assembler pre-sorts them by shoe label).
pub fn render_box_panel(panel: &BoxPanel) -> String {
    let n = panel.boxes.len().max(1);
    let width = MARGIN_LEFT + MARGIN_RIGHT + SLOT_WIDTH * n as f64;
    let height = MARGIN_TOP + MARGIN_BOTTOM + PLOT_HEIGHT;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for b in &panel.boxes {
        lo = lo.min(b.stats.whisker_low);
        hi = hi.max(b.stats.whisker_high);
        for o in &b.stats.outliers {
            lo = lo.min(*o);
            hi = hi.max(*o);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let scale = YScale::new(lo, hi);

    let title = format!(
        "{} — {} range of motion by shoe ({} group)",
        panel.candidate, panel.joint, panel.group
    );
    let mut out = svg_header(width, height, &title);
    y_axis(&mut out, &scale, "range of motion (deg)");

    for (k, b) in panel.boxes.iter().enumerate() {
        let cx = MARGIN_LEFT + SLOT_WIDTH * (k as f64 + 0.5);
        let s = &b.stats;
        let _ = writeln!(
            out,
            r#"<g class="box" data-shoe="{shoe}" data-n="{n}" data-median="{median}" data-q1="{q1}" data-q3="{q3}" data-whisker-low="{wl}" data-whisker-high="{wh}">"#,
            shoe = b.shoe,
            n = s.n,
            median = fmt4(s.median),
            q1 = fmt4(s.q1),
            q3 = fmt4(s.q3),
            wl = fmt4(s.whisker_low),
            wh = fmt4(s.whisker_high),
        );
        // Whisker stems and caps.
        for (from, to) in [(s.whisker_low, s.q1), (s.q3, s.whisker_high)] {
            let _ = writeln!(
                out,
                r#"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="black"/>"#,
                x = px(cx),
                y1 = px(scale.to_px(from)),
                y2 = px(scale.to_px(to)),
            );
        }
        for v in [s.whisker_low, s.whisker_high] {
            let _ = writeln!(
                out,
                r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
                x1 = px(cx - BOX_WIDTH / 4.0),
                x2 = px(cx + BOX_WIDTH / 4.0),
                y = px(scale.to_px(v)),
            );
        }
        // Interquartile box and median line.
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="none" stroke="black"/>"#,
            x = px(cx - BOX_WIDTH / 2.0),
            y = px(scale.to_px(s.q3)),
            w = px(BOX_WIDTH),
            h = px((scale.to_px(s.q1) - scale.to_px(s.q3)).max(0.0)),
        );
        let _ = writeln!(
            out,
            r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="black" stroke-width="2"/>"#,
            x1 = px(cx - BOX_WIDTH / 2.0),
            x2 = px(cx + BOX_WIDTH / 2.0),
            y = px(scale.to_px(s.median)),
        );
        for o in &s.outliers {
            let _ = writeln!(
                out,
                r#"<circle cx="{x}" cy="{y}" r="3" fill="none" stroke="black" data-value="{v}"/>"#,
                x = px(cx),
                y = px(scale.to_px(*o)),
                v = fmt4(*o),
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle">{shoe}</text>"#,
            x = px(cx),
            y = px(MARGIN_TOP + PLOT_HEIGHT + 20.0),
            shoe = b.shoe,
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Renders per-cycle traces (each resampled to 0–100% of the gait cycle) as
/// overlaid polylines.
pub fn render_cycle_overlay(title: &str, traces: &[Vec<f64>]) -> String {
    let width = MARGIN_LEFT + MARGIN_RIGHT + 440.0;
    let height = MARGIN_TOP + MARGIN_BOTTOM + PLOT_HEIGHT;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in traces {
        for v in t {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let scale = YScale::new(lo, hi);

    let mut out = svg_header(width, height, title);
    y_axis(&mut out, &scale, "angle (deg)");
    let x_at = |pct: usize| MARGIN_LEFT + 440.0 * pct as f64 / 100.0;
    let _ = writeln!(
        out,
        r#"<line x1="{x1}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        x1 = px(MARGIN_LEFT),
        x2 = px(MARGIN_LEFT + 440.0),
        y = px(MARGIN_TOP + PLOT_HEIGHT),
    );
    for pct in [0usize, 25, 50, 75, 100] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="middle">{pct}</text>"#,
            x = px(x_at(pct)),
            y = px(MARGIN_TOP + PLOT_HEIGHT + 18.0),
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle">gait cycle (%)</text>"#,
        x = px(MARGIN_LEFT + 220.0),
        y = px(MARGIN_TOP + PLOT_HEIGHT + 38.0),
    );
    let _ = writeln!(out, r#"<g class="cycles" data-cycles="{}">"#, traces.len());
    for trace in traces {
        let mut points = String::new();
        for (pct, v) in trace.iter().enumerate() {
            if pct > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{},{}", px(x_at(pct)), px(scale.to_px(*v)));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{points}" fill="none" stroke="steelblue" stroke-opacity="0.45"/>"#,
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BoxStats;
    use crate::report::LabeledBox;

    fn stats(median: f64, q1: f64, q3: f64, wl: f64, wh: f64) -> BoxStats {
        BoxStats {
            median,
            q1,
            q3,
            whisker_low: wl,
            whisker_high: wh,
            outliers: vec![],
            n: 9,
        }
    }

    #[test]
    fn box_panel_embeds_data_units() {
        let panel = BoxPanel {
            candidate: "cand01".into(),
            joint: "knee".into(),
            group: "walking_height".into(),
            boxes: vec![LabeledBox {
                shoe: "H1".into(),
                stats: stats(5.0, 3.0, 7.0, 1.0, 9.0),
            }],
        };
        let svg = render_box_panel(&panel);
        for needle in [
            r#"data-median="5.0000""#,
            r#"data-q1="3.0000""#,
            r#"data-q3="7.0000""#,
            r#"data-whisker-low="1.0000""#,
            r#"data-whisker-high="9.0000""#,
        ] {
            assert!(svg.contains(needle), "missing {needle}");
        }
    }

    #[test]
    fn boxes_render_in_label_order() {
        let panel = BoxPanel {
            candidate: "cand01".into(),
            joint: "ankle".into(),
            group: "walking_height".into(),
            boxes: vec![
                LabeledBox {
                    shoe: "H1".into(),
                    stats: stats(20.0, 18.0, 22.0, 15.0, 25.0),
                },
                LabeledBox {
                    shoe: "H2".into(),
                    stats: stats(18.0, 16.0, 20.0, 13.0, 23.0),
                },
                LabeledBox {
                    shoe: "H3".into(),
                    stats: stats(16.0, 14.0, 18.0, 11.0, 21.0),
                },
            ],
        };
        let svg = render_box_panel(&panel);
        let h1 = svg.find(r#"data-shoe="H1""#).unwrap();
        let h2 = svg.find(r#"data-shoe="H2""#).unwrap();
        let h3 = svg.find(r#"data-shoe="H3""#).unwrap();
        assert!(h1 < h2 && h2 < h3);
    }

    #[test]
    fn outliers_carry_values() {
        let mut s = stats(5.0, 4.0, 6.0, 3.0, 7.0);
        s.outliers = vec![42.0];
        let panel = BoxPanel {
            candidate: "c".into(),
            joint: "knee".into(),
            group: "overall_height".into(),
            boxes: vec![LabeledBox {
                shoe: "H3".into(),
                stats: s,
            }],
        };
        assert!(render_box_panel(&panel).contains(r#"data-value="42.0000""#));
    }

    #[test]
    fn overlay_counts_cycles_and_is_deterministic() {
        let traces: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                (0..=100)
                    .map(|i| (k as f64) + (i as f64 * 0.06).sin() * 30.0)
                    .collect()
            })
            .collect();
        let a = render_cycle_overlay("left knee", &traces);
        let b = render_cycle_overlay("left knee", &traces);
        assert_eq!(a, b);
        assert!(a.contains(r#"data-cycles="3""#));
        assert_eq!(a.matches("<polyline").count(), 3);
    }
}
