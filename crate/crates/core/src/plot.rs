//! SVG overlays of observations, ground truth and predicted rollouts.
//!
//! Colors follow a fixed legend: curbs green, training data gray, the
//! observed prefix pink, ground truth dashed blue, predictions red (opacity
//! scaled by hypothesis weight).

use std::fmt::Write as _;

use crate::context::{IntersectionMap, Rect};
use crate::evalkit::Point;
use crate::predictor::Prediction;

const PANEL: f64 = 360.0;
const PAD: f64 = 10.0;
const TITLE: f64 = 22.0;

/// One model's view of one test trajectory.
pub struct Panel<'a> {
    pub title: String,
    pub prediction: Option<&'a Prediction>,
}

pub struct Scene<'a> {
    pub bounds: Rect,
    pub map: Option<&'a IntersectionMap>,
    pub training: &'a [Vec<Point>],
    pub observed: &'a [Point],
    pub truth: &'a [Point],
}

struct Frame {
    bounds: Rect,
    scale: f64,
    x0: f64,
}

impl Frame {
    fn new(bounds: Rect, index: usize) -> Self {
        let scale = (PANEL - 2.0 * PAD) / bounds.width().max(bounds.height()).max(1e-9);
        Frame {
            bounds,
            scale,
            x0: index as f64 * PANEL,
        }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        (
            self.x0 + PAD + (p.0 - self.bounds.min_x) * self.scale,
            TITLE + PAD + (self.bounds.max_y - p.1) * self.scale,
        )
    }

    fn polyline(&self, out: &mut String, pts: &[Point], style: &str) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, coords.join(" "));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the scene once per panel, side by side.
pub fn render(scene: &Scene, panels: &[Panel]) -> String {
    let n = panels.len().max(1);
    let (w, h) = (PANEL * n as f64, PANEL + TITLE);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let f = Frame::new(scene.bounds, i);
        let (cx0, cy0) = f.px((scene.bounds.min_x, scene.bounds.max_y));
        let (cx1, cy1) = f.px((scene.bounds.max_x, scene.bounds.min_y));
        let _ = writeln!(
            out,
            r#"<clipPath id="c{i}"><rect x="{cx0:.2}" y="{cy0:.2}" width="{:.2}" height="{:.2}"/></clipPath>"#,
            cx1 - cx0,
            cy1 - cy0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="16" font-family="sans-serif" font-size="13">{}</text>"#,
            f.x0 + PAD,
            escape(&panel.title)
        );
        let _ = writeln!(out, r#"<g clip-path="url(#c{i})">"#);
        for t in scene.training {
            f.polyline(&mut out, t, r##"stroke="#b0b0b0" stroke-width="0.6""##);
        }
        if let Some(map) = scene.map {
            let reach = scene.bounds.width().hypot(scene.bounds.height());
            for line in [map.curb_left(), map.curb_right()] {
                let a = (
                    line.point.0 - line.direction.0 * reach,
                    line.point.1 - line.direction.1 * reach,
                );
                let b = (
                    line.point.0 + line.direction.0 * reach,
                    line.point.1 + line.direction.1 * reach,
                );
                f.polyline(&mut out, &[a, b], r##"stroke="#2e9d3a" stroke-width="2""##);
            }
        }
        f.polyline(&mut out, scene.observed, r##"stroke="#e75fa6" stroke-width="2.5""##);
        f.polyline(
            &mut out,
            scene.truth,
            r##"stroke="#2a5bd7" stroke-width="2" stroke-dasharray="6 4""##,
        );
        if let Some(pred) = panel.prediction {
            let top = pred.hypotheses.iter().map(|h| h.weight).fold(0.0, f64::max);
            for h in &pred.hypotheses {
                let alpha = if top > 0.0 { 0.25 + 0.75 * h.weight / top } else { 1.0 };
                f.polyline(
                    &mut out,
                    &h.rollout.points,
                    &format!(r##"stroke="#d62728" stroke-width="2" stroke-opacity="{alpha:.3}""##),
                );
            }
        }
        let _ = writeln!(out, "</g>");
        let _ = writeln!(
            out,
            r##"<rect x="{cx0:.2}" y="{cy0:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444" stroke-width="0.8"/>"##,
            cx1 - cx0,
            cy1 - cy0
        );
    }
    out.push_str("</svg>\n");
    out
}
