//! Static SVG overlay of a run: reference path, plant truth, estimate and
//! raw GPS fixes, drawn at equal scale on both axes.

use std::fmt::Write as _;

use nalgebra::Vector2;
use navsim::sim::RunLog;
use navsim::trajectory::Trajectory;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN: f64 = 70.0;

const REFERENCE_COLOR: &str = "#2ca02c";
const TRUTH_COLOR: &str = "#1f77b4";
const ESTIMATE_COLOR: &str = "#ff7f0e";
const MEASUREMENT_COLOR: &str = "#d62728";

struct Bounds {
    min: Vector2<f64>,
    max: Vector2<f64>,
}

impl Bounds {
    fn of<'a>(points: impl IntoIterator<Item = &'a Vector2<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Bounds {
            min: first,
            max: first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }
}

/// Maps plane coordinates to the canvas (y up).
struct Canvas {
    scale: f64,
    origin: Vector2<f64>,
    center: Vector2<f64>,
}

impl Canvas {
    fn new(b: &Bounds) -> Self {
        let span = (b.max - b.min).map(|s| s.max(1e-3));
        let scale = ((WIDTH - 2.0 * MARGIN) / span.x).min((HEIGHT - 2.0 * MARGIN) / span.y);
        Self {
            scale,
            origin: (b.min + b.max) / 2.0,
            center: Vector2::new(WIDTH / 2.0, HEIGHT / 2.0),
        }
    }

    fn map(&self, p: &Vector2<f64>) -> (f64, f64) {
        let d = (p - self.origin) * self.scale;
        (self.center.x + d.x, self.center.y - d.y)
    }

    fn unmap_x(&self, px: f64) -> f64 {
        self.origin.x + (px - self.center.x) / self.scale
    }

    fn unmap_y(&self, py: f64) -> f64 {
        self.origin.y - (py - self.center.y) / self.scale
    }
}

/// Tick spacing of 1, 2 or 5 times a power of ten giving about `target`
/// intervals across `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn polyline(out: &mut String, id: &str, canvas: &Canvas, pts: &[Vector2<f64>], style: &str) {
    if pts.is_empty() {
        return;
    }
    let mut coords = String::new();
    for p in pts {
        let (x, y) = canvas.map(p);
        let _ = write!(coords, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        out,
        r#"  <polyline id="{id}" fill="none" {style} points="{}"/>"#,
        coords.trim_end()
    );
}

/// Renders the overlay. `None` when the log has no rows.
pub fn render(log: &RunLog, trajectory: &Trajectory, title: &str) -> Option<String> {
    if log.rows.is_empty() {
        return None;
    }
    let reference = trajectory.polyline();
    let truth: Vec<_> = log
        .rows
        .iter()
        .map(|r| Vector2::new(r.truth.x, r.truth.y))
        .collect();
    let estimate: Vec<_> = log
        .rows
        .iter()
        .map(|r| Vector2::new(r.estimate.x, r.estimate.y))
        .collect();
    let fixes: Vec<_> = log.rows.iter().filter_map(|r| r.measurement).collect();

    let bounds = Bounds::of(
        reference
            .iter()
            .chain(&truth)
            .chain(&estimate)
            .chain(&fixes),
    )?;
    let canvas = Canvas::new(&bounds);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"  <text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // grid and axis labels in metres
    let (x0, x1) = (
        canvas.unmap_x(MARGIN / 2.0),
        canvas.unmap_x(WIDTH - MARGIN / 2.0),
    );
    let (y0, y1) = (
        canvas.unmap_y(HEIGHT - MARGIN / 2.0),
        canvas.unmap_y(MARGIN / 2.0),
    );
    let step = tick_step((x1 - x0).max(y1 - y0), 8.0);
    let _ = writeln!(
        svg,
        r##"  <g id="grid" stroke="#dddddd" stroke-width="1">"##
    );
    let mut labels = String::new();
    let mut v = (x0 / step).ceil() * step;
    while v <= x1 {
        let (px, _) = canvas.map(&Vector2::new(v, 0.0));
        let _ = writeln!(
            svg,
            r#"    <line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}"/>"#,
            MARGIN / 2.0,
            HEIGHT - MARGIN / 2.0
        );
        let _ = writeln!(
            labels,
            r#"    <text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN / 2.0 + 16.0,
            fmt_tick(v, step)
        );
        v += step;
    }
    let mut v = (y0 / step).ceil() * step;
    while v <= y1 {
        let (_, py) = canvas.map(&Vector2::new(0.0, v));
        let _ = writeln!(
            svg,
            r#"    <line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}"/>"#,
            MARGIN / 2.0,
            WIDTH - MARGIN / 2.0
        );
        let _ = writeln!(
            labels,
            r#"    <text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN / 2.0 - 4.0,
            py + 4.0,
            fmt_tick(v, step)
        );
        v += step;
    }
    let _ = writeln!(svg, "  </g>");
    let _ = writeln!(svg, r##"  <g id="tick-labels" fill="#444444">"##);
    svg.push_str(&labels);
    let _ = writeln!(svg, "  </g>");
    let _ = writeln!(
        svg,
        r#"  <text x="{:.1}" y="{:.1}" text-anchor="middle">x (m)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        svg,
        r#"  <text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">y (m)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    let _ = writeln!(
        svg,
        r#"  <g id="measurements" fill="{MEASUREMENT_COLOR}" fill-opacity="0.5">"#
    );
    for p in &fixes {
        let (x, y) = canvas.map(p);
        let _ = writeln!(svg, r#"    <circle cx="{x:.2}" cy="{y:.2}" r="2"/>"#);
    }
    let _ = writeln!(svg, "  </g>");
    polyline(
        &mut svg,
        "reference",
        &canvas,
        &reference,
        &format!(r#"stroke="{REFERENCE_COLOR}" stroke-width="2""#),
    );
    polyline(
        &mut svg,
        "truth",
        &canvas,
        &truth,
        &format!(r#"stroke="{TRUTH_COLOR}" stroke-width="1.5""#),
    );
    polyline(
        &mut svg,
        "estimate",
        &canvas,
        &estimate,
        &format!(r#"stroke="{ESTIMATE_COLOR}" stroke-width="1.5" stroke-dasharray="5,3""#),
    );

    let entries = [
        ("reference", REFERENCE_COLOR, false),
        ("truth", TRUTH_COLOR, false),
        ("estimate", ESTIMATE_COLOR, false),
        ("gps fixes", MEASUREMENT_COLOR, true),
    ];
    let _ = writeln!(svg, r#"  <g id="legend">"#);
    let _ = writeln!(
        svg,
        r##"    <rect x="{:.1}" y="40" width="120" height="{}" fill="white" stroke="#999999"/>"##,
        WIDTH - MARGIN / 2.0 - 125.0,
        entries.len() * 18 + 8
    );
    for (i, (name, color, dot)) in entries.iter().enumerate() {
        let x = WIDTH - MARGIN / 2.0 - 115.0;
        let y = 56.0 + 18.0 * i as f64;
        if *dot {
            let _ = writeln!(
                svg,
                r#"    <circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x + 12.0,
                y - 4.0
            );
        } else {
            let _ = writeln!(
                svg,
                r#"    <line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
                y - 4.0,
                x + 24.0,
                y - 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"    <text x="{:.1}" y="{y:.1}">{name}</text>"#,
            x + 32.0
        );
    }
    let _ = writeln!(svg, "  </g>");
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(tick_step(10.0, 8.0), 1.0);
        assert_eq!(tick_step(20.0, 8.0), 2.0);
        assert_eq!(tick_step(0.4, 8.0), 0.05);
        assert_eq!(tick_step(400.0, 8.0), 50.0);
    }

    #[test]
    fn tick_labels() {
        assert_eq!(fmt_tick(-0.0, 1.0), "0");
        assert_eq!(fmt_tick(2.5, 0.5), "2.5");
        assert_eq!(fmt_tick(-0.000001, 0.05), "0.00");
        assert_eq!(fmt_tick(-3.0, 1.0), "-3");
    }

    #[test]
    fn equal_axis_scale() {
        let b = Bounds::of(&[Vector2::new(0.0, 0.0), Vector2::new(10.0, 2.0)]).unwrap();
        let c = Canvas::new(&b);
        let (ax, ay) = c.map(&Vector2::new(0.0, 0.0));
        let (bx, by) = c.map(&Vector2::new(1.0, 1.0));
        assert!(((bx - ax) - (ay - by)).abs() < 1e-12);
        assert!(bx > ax && by < ay);
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
