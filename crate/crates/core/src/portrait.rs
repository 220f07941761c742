//! Deterministic SVG phase portraits.
//!
//! The viewport is fixed at 1000×1000. A data point (x, y) inside the plot
//! window [x_min, x_max] × [y_min, y_max] maps to
//!
//! ```text
//! X = 50 + 900 (x − x_min) / (x_max − x_min)
//! Y = 950 − 900 (y − y_min) / (y_max − y_min)
//! ```
//!
//! Sphere portraits use the window [−1.05, 1.05]², other data its bounding
//! box with a 5% margin (a degenerate span becomes value ± 1). Three selected
//! coordinates are drawn in an oblique projection (x, y, z) ↦ (x + 0.35z, y + 0.35z).

use std::fmt::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numfmt::fmt12;

pub const VIEWPORT: f64 = 1000.0;
const MARGIN: f64 = 50.0;
const SPAN: f64 = 900.0;
const OBLIQUE: f64 = 0.35;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Set of points drawn as a union of squares of half-width `radius` (data units).
#[derive(Clone, Debug)]
pub struct ShadedSet {
    pub label: String,
    pub points: Vec<DVector<f64>>,
    pub radius: f64,
}

#[derive(Clone, Debug, Default)]
pub struct PortraitData {
    pub title: String,
    /// Dimension of the data points.
    pub dim: usize,
    pub trajectories: Vec<Vec<DVector<f64>>>,
    pub equilibria: Vec<DVector<f64>>,
    pub sets: Vec<ShadedSet>,
    /// The data lives on the unit sphere: fixed window and a unit reference circle (the equator
    /// when the last coordinate is not plotted).
    pub sphere: bool,
}

/// Which data coordinates are plotted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Projection {
    pub coords: Vec<usize>,
}

/// Plot window and the resulting affine map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Window {
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + SPAN * (x - self.x.0) / (self.x.1 - self.x.0),
            VIEWPORT - MARGIN - SPAN * (y - self.y.0) / (self.y.1 - self.y.0),
        )
    }

    fn scale(&self) -> (f64, f64) {
        (SPAN / (self.x.1 - self.x.0), SPAN / (self.y.1 - self.y.0))
    }
}

fn resolve(data: &PortraitData, projection: Option<&Projection>) -> Result<Vec<usize>> {
    let coords = match projection {
        Some(p) => p.coords.clone(),
        None if data.dim <= 3 => (0..data.dim.min(2)).collect(),
        None => {
            return Err(Error::input(format!(
                "data has dimension {} > 3; a projection selecting 2 or 3 coordinates is required",
                data.dim
            )))
        }
    };
    if data.dim == 1 && coords == [0] {
        return Ok(coords);
    }
    if !(2..=3).contains(&coords.len()) {
        return Err(Error::input("a projection selects 2 or 3 coordinates"));
    }
    if let Some(c) = coords.iter().find(|&&c| c >= data.dim) {
        return Err(Error::dim("projection coordinate", format!("< {}", data.dim), c));
    }
    Ok(coords)
}

fn project(p: &DVector<f64>, coords: &[usize]) -> (f64, f64) {
    match coords {
        [a] => (p[*a], 0.0),
        [a, b] => (p[*a], p[*b]),
        [a, b, c] => (p[*a] + OBLIQUE * p[*c], p[*b] + OBLIQUE * p[*c]),
        _ => unreachable!(),
    }
}

fn window(data: &PortraitData, coords: &[usize]) -> Window {
    if data.sphere {
        let r = if coords.len() == 3 { 1.05 * (1.0 + OBLIQUE) } else { 1.05 };
        return Window { x: (-r, r), y: (-r, r) };
    }
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut add = |(x, y): (f64, f64), pad: f64| {
        if x.is_finite() && y.is_finite() {
            lo = (lo.0.min(x - pad), lo.1.min(y - pad));
            hi = (hi.0.max(x + pad), hi.1.max(y + pad));
        }
    };
    for t in &data.trajectories {
        for p in t {
            add(project(p, coords), 0.0);
        }
    }
    for p in &data.equilibria {
        add(project(p, coords), 0.0);
    }
    for s in &data.sets {
        for p in &s.points {
            add(project(p, coords), s.radius);
        }
    }
    let axis = |lo: f64, hi: f64| {
        if !lo.is_finite() {
            (-1.0, 1.0)
        } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            (lo - 1.0, hi + 1.0)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    Window {
        x: axis(lo.0, hi.0),
        y: axis(lo.1, hi.1),
    }
}

fn num(x: f64) -> String {
    // two decimals keep the file compact; the output is still byte-stable
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 { "0".into() } else { fmt12(r) }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the portrait. Identical inputs give byte-identical output.
pub fn emit_portrait(data: &PortraitData, projection: Option<&Projection>) -> Result<String> {
    let coords = resolve(data, projection)?;
    let w = window(data, &coords);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="1000" height="1000" viewBox="0 0 1000 1000">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="1000" height="1000" fill="white"/>"#);
    if !data.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="500" y="30" text-anchor="middle" font-family="sans-serif" font-size="20">{}</text>"#,
            escape(&data.title)
        );
    }
    // frame and axes through the origin when visible
    let _ = writeln!(
        s,
        r##"<rect x="50" y="50" width="900" height="900" fill="none" stroke="#999" stroke-width="1"/>"##
    );
    let (ox, oy) = w.map(0.0, 0.0);
    if (w.x.0..=w.x.1).contains(&0.0) {
        let _ = writeln!(s, r##"<line x1="{}" y1="50" x2="{}" y2="950" stroke="#ccc" stroke-width="1"/>"##, num(ox), num(ox));
    }
    if (w.y.0..=w.y.1).contains(&0.0) {
        let _ = writeln!(s, r##"<line x1="50" y1="{}" x2="950" y2="{}" stroke="#ccc" stroke-width="1"/>"##, num(oy), num(oy));
    }
    if data.sphere {
        let (sx, sy) = w.scale();
        let _ = writeln!(
            s,
            r##"<ellipse class="reference" cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="#444" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
            num(ox),
            num(oy),
            num(sx),
            num(sy)
        );
    }
    for (k, set) in data.sets.iter().enumerate() {
        let color = PALETTE[(k + 2) % PALETTE.len()];
        let (sx, sy) = w.scale();
        let (hw, hh) = ((set.radius * sx).max(0.5), (set.radius * sy).max(0.5));
        let _ = writeln!(
            s,
            r#"<g class="set" fill="{color}" fill-opacity="0.35" stroke="none"><title>{}</title>"#,
            escape(&set.label)
        );
        for p in &set.points {
            let (x, y) = project(p, &coords);
            let (cx, cy) = w.map(x, y);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}"/>"#,
                num(cx - hw),
                num(cy - hh),
                num(2.0 * hw),
                num(2.0 * hh)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    for (k, t) in data.trajectories.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let color = PALETTE[k % 2];
        let pts: Vec<String> = t
            .iter()
            .map(|p| {
                let (x, y) = project(p, &coords);
                let (cx, cy) = w.map(x, y);
                format!("{},{}", num(cx), num(cy))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="trajectory" points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
    }
    for p in &data.equilibria {
        let (x, y) = project(p, &coords);
        let (cx, cy) = w.map(x, y);
        let _ = writeln!(
            s,
            r#"<circle class="equilibrium" cx="{}" cy="{}" r="6" fill="black"/>"#,
            num(cx),
            num(cy)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
