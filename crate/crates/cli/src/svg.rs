//! Phase portraits as plain SVG 1.1: axes, trajectories, the unsafe set
//! `{h < 0}` and equilibrium markers.

use std::fmt::Write as _;

use cbflab_core::equilibria::{EquilibriumKind, EquilibriumReport};
use cbflab_core::sampling::SearchBox;
use cbflab_core::sim::Trajectory;
use cbflab_core::{Quadratic, ScalarCertificate, State};
use nalgebra::{Matrix2, Vector2};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 48.0;
const MAX_POINTS: usize = 400;
const BOUNDARY_VERTICES: usize = 360;
const SHADE_CELLS: usize = 200;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

pub struct Portrait<'a> {
    pub title: String,
    pub bounds: &'a SearchBox,
    pub cbf: &'a ScalarCertificate,
    pub trajectories: &'a [Trajectory],
    pub equilibria: &'a [EquilibriumReport],
}

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let span = SIZE - 2.0 * MARGIN;
        (
            MARGIN + (x - self.lo[0]) / (self.hi[0] - self.lo[0]) * span,
            SIZE - MARGIN - (y - self.lo[1]) / (self.hi[1] - self.lo[1]) * span,
        )
    }

    fn point(&self, x: &State) -> (f64, f64) {
        self.px(x[0], x[1])
    }
}

fn tick_step(span: f64) -> f64 {
    let raw = span / 8.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|k| k * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

impl Portrait<'_> {
    pub fn render(&self) -> String {
        let b = self.bounds;
        let frame = Frame {
            lo: [b.lower()[0], b.lower()[1]],
            hi: [b.upper()[0], b.upper()[1]],
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{w}"/></clipPath>"#,
            w = SIZE - 2.0 * MARGIN
        );
        self.obstacle(&frame, &mut s);
        self.axes(&frame, &mut s);
        self.paths(&frame, &mut s);
        self.markers(&frame, &mut s);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="14" text-anchor="middle">{t}</text>"#,
            x = SIZE / 2.0,
            y = MARGIN / 2.0,
            t = escape(&self.title)
        );
        s.push_str("</svg>\n");
        s
    }

    fn obstacle(&self, frame: &Frame, s: &mut String) {
        let style = r##"fill="#bbbbbb" fill-opacity="0.6" stroke="#666666" stroke-width="1" clip-path="url(#plot)""##;
        if let Some(ring) = self.cbf.quadratic().and_then(conic_boundary) {
            let (ring, inside_unsafe) = ring;
            let mut d = String::new();
            if !inside_unsafe {
                // unsafe outside the curve: frame minus the ellipse
                let (x0, y0) = frame.px(frame.lo[0], frame.lo[1]);
                let (x1, y1) = frame.px(frame.hi[0], frame.hi[1]);
                let _ = write!(d, "M{x0:.2},{y0:.2} L{x1:.2},{y0:.2} L{x1:.2},{y1:.2} L{x0:.2},{y1:.2} Z ");
            }
            for (i, p) in ring.iter().enumerate() {
                let (x, y) = frame.px(p[0], p[1]);
                let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { 'M' } else { 'L' });
            }
            d.push('Z');
            let _ = writeln!(s, r#"<path d="{d}" fill-rule="evenodd" {style}/>"#);
            return;
        }
        // no closed boundary: shade runs of unsafe cells row by row
        let cell = [
            (frame.hi[0] - frame.lo[0]) / SHADE_CELLS as f64,
            (frame.hi[1] - frame.lo[1]) / SHADE_CELLS as f64,
        ];
        let _ = writeln!(s, r##"<g fill="#bbbbbb" fill-opacity="0.6" clip-path="url(#plot)">"##);
        for j in 0..SHADE_CELLS {
            let y = frame.lo[1] + (j as f64 + 0.5) * cell[1];
            let mut i = 0;
            while i < SHADE_CELLS {
                let unsafe_at = |i: usize| {
                    let x = frame.lo[0] + (i as f64 + 0.5) * cell[0];
                    self.cbf.value(&State::from_column_slice(&[x, y])) < 0.0
                };
                if !unsafe_at(i) {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < SHADE_CELLS && unsafe_at(i) {
                    i += 1;
                }
                let (x0, y1) = frame.px(frame.lo[0] + start as f64 * cell[0], y + 0.5 * cell[1]);
                let (x1, y0) = frame.px(frame.lo[0] + i as f64 * cell[0], y - 0.5 * cell[1]);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}"/>"#,
                    x1 - x0,
                    y0 - y1
                );
            }
        }
        s.push_str("</g>\n");
    }

    fn axes(&self, frame: &Frame, s: &mut String) {
        let (x0, y0) = frame.px(frame.lo[0], frame.lo[1]);
        let (x1, y1) = frame.px(frame.hi[0], frame.hi[1]);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(s, r##"<g stroke="#999999" stroke-dasharray="4,4">"##);
        if frame.lo[0] < 0.0 && frame.hi[0] > 0.0 {
            let (x, _) = frame.px(0.0, 0.0);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{y1:.2}"/>"#);
        }
        if frame.lo[1] < 0.0 && frame.hi[1] > 0.0 {
            let (_, y) = frame.px(0.0, 0.0);
            let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}"/>"#);
        }
        s.push_str("</g>\n");

        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
        for axis in 0..2 {
            let step = tick_step(frame.hi[axis] - frame.lo[axis]);
            let mut v = (frame.lo[axis] / step).ceil() * step;
            while v <= frame.hi[axis] + 1e-9 {
                let label = format!("{}", (v / step).round() * step);
                if axis == 0 {
                    let (x, _) = frame.px(v, frame.lo[1]);
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                        y0 + 5.0,
                        y0 + 18.0
                    );
                } else {
                    let (_, y) = frame.px(frame.lo[0], v);
                    let _ = writeln!(
                        s,
                        r#"<line x1="{x0:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
                        x0 - 5.0,
                        x0 - 8.0,
                        y + 4.0
                    );
                }
                v += step;
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">x1</text><text x="{:.2}" y="{:.2}" text-anchor="middle">x2</text>"#,
            SIZE / 2.0,
            SIZE - 8.0,
            14.0,
            SIZE / 2.0
        );
        s.push_str("</g>\n");
    }

    fn paths(&self, frame: &Frame, s: &mut String) {
        let _ = writeln!(s, r#"<g fill="none" stroke-width="1.5" clip-path="url(#plot)">"#);
        for (k, t) in self.trajectories.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let color = PALETTE[k % PALETTE.len()];
            let stride = t.len().div_ceil(MAX_POINTS).max(1);
            let mut pts = String::new();
            for (i, x) in t.states.iter().enumerate() {
                if i % stride == 0 || i + 1 == t.len() {
                    let (px, py) = frame.point(x);
                    let _ = write!(pts, "{px:.2},{py:.2} ");
                }
            }
            let _ = writeln!(s, r#"<polyline stroke="{color}" points="{}"/>"#, pts.trim_end());
            let (sx, sy) = frame.point(&t.states[0]);
            let _ = writeln!(s, r#"<circle cx="{sx:.2}" cy="{sy:.2}" r="3" fill="{color}"/>"#);
        }
        s.push_str("</g>\n");
    }

    fn markers(&self, frame: &Frame, s: &mut String) {
        for e in self.equilibria {
            let (x, y) = frame.point(&e.location);
            let shape = match e.kind {
                EquilibriumKind::Origin => format!(
                    r#"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="black" stroke-width="2"/>"#,
                    x - 6.0,
                    y - 6.0,
                    x + 6.0,
                    y + 6.0,
                    x - 6.0,
                    y + 6.0,
                    x + 6.0,
                    y - 6.0
                ),
                EquilibriumKind::Interior => format!(
                    r#"<path d="M{x:.2},{:.2} L{:.2},{y:.2} L{x:.2},{:.2} L{:.2},{y:.2} Z" fill="red" stroke="black"/>"#,
                    y - 7.0,
                    x + 7.0,
                    y + 7.0,
                    x - 7.0
                ),
                EquilibriumKind::Boundary1 | EquilibriumKind::Boundary2 => format!(
                    r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="blue" stroke="black"/>"#,
                    x - 5.0,
                    y - 5.0
                ),
            };
            let _ = writeln!(s, "<g><title>{} {:?}</title>{shape}</g>", e.kind.label(), e.location.as_slice());
        }
    }
}

/// Closed boundary of `h = 0` for a definite planar quadratic, and whether
/// `h < 0` lies inside it.
fn conic_boundary(q: &Quadratic) -> Option<(Vec<Vector2<f64>>, bool)> {
    if q.q.nrows() != 2 {
        return None;
    }
    let m = Matrix2::new(q.q[(0, 0)], q.q[(0, 1)], q.q[(1, 0)], q.q[(1, 1)]);
    let det = m.determinant();
    if det <= 1e-12 {
        return None;
    }
    let b = Vector2::new(q.linear[0], q.linear[1]);
    let centre = -(m.try_inverse()? * b) * 0.5;
    let hc = q.value(&State::from_column_slice(centre.as_slice()));
    let positive = m[(0, 0)] > 0.0;
    // the level set is empty unless h(c) and the form have opposite signs
    if (positive && hc >= 0.0) || (!positive && hc <= 0.0) {
        return None;
    }
    let ring = (0..BOUNDARY_VERTICES)
        .map(|i| {
            let th = std::f64::consts::TAU * i as f64 / BOUNDARY_VERTICES as f64;
            let d = Vector2::new(th.cos(), th.sin());
            let t = (-hc / d.dot(&(m * d))).sqrt();
            centre + d * t
        })
        .collect();
    Some((ring, positive))
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn disc_obstacle_is_inside() {
        let q = Quadratic::new(dmatrix![1.0, 0.0; 0.0, 1.0], dvector![0.0, -8.0], 12.0).unwrap();
        let (ring, inside) = conic_boundary(&q).unwrap();
        assert!(inside);
        for p in ring {
            assert!(((p - Vector2::new(0.0, 4.0)).norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_safe_set_shades_outside() {
        let q = Quadratic::new(dmatrix![-0.1, -0.075; -0.075, -0.1], dvector![0.0, 0.0], 4.9).unwrap();
        let (ring, inside) = conic_boundary(&q).unwrap();
        assert!(!inside);
        for p in ring {
            assert!(q.value(&State::from_column_slice(p.as_slice())).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_barrier_has_no_boundary() {
        let q = Quadratic::new(dmatrix![0.0, 0.0; 0.0, 0.0], dvector![0.0, 0.0], 1.0).unwrap();
        assert!(conic_boundary(&q).is_none());
    }

    #[test]
    fn ticks() {
        assert_eq!(tick_step(16.0), 2.0);
        assert_eq!(tick_step(20.0), 5.0);
        assert_eq!(tick_step(2.0), 0.5);
    }
}
