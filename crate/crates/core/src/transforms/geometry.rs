//! Coordinate maps for the geometric steps.
//!
//! Coordinates are continuous: pixel `(row, col)` covers `[col, col+1) x [row, row+1)`,
//! so a frame of width `W` spans `[0, W]`. Every step here is the exact
//! analytic counterpart of the pixel warp in `pixels`.

use serde::{Deserialize, Serialize};

use crate::manifest::{BBox, Keypoint};

/// One concrete geometric operation with its parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Step {
    /// Rescale to `height x width`.
    Resize { height: usize, width: usize },
    /// Keep the `height x width` window whose top-left corner is `(x, y)`.
    Crop {
        x: usize,
        y: usize,
        height: usize,
        width: usize,
    },
    /// Mirror horizontally.
    Flip,
    /// Rotate about the frame center, counter-clockwise as displayed. Output keeps the input shape.
    Rotate { degrees: f64 },
}

impl Step {
    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn output_shape(&self, src: (usize, usize)) -> (usize, usize) {
        match *self {
            Step::Resize { height, width } | Step::Crop { height, width, .. } => (height, width),
            Step::Flip | Step::Rotate { .. } => src,
        }
    }
}

/// Maps a point through `step` applied to a frame of shape `src` = `(height, width)`.
pub fn transform_point(p: (f64, f64), step: &Step, src: (usize, usize)) -> (f64, f64) {
    let (x, y) = p;
    let (h, w) = (src.0 as f64, src.1 as f64);
    match *step {
        Step::Resize { height, width } => (x * width as f64 / w, y * height as f64 / h),
        Step::Crop { x: ox, y: oy, .. } => (x - ox as f64, y - oy as f64),
        Step::Flip => (w - x, y),
        Step::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            let (cx, cy) = (w / 2.0, h / 2.0);
            let (dx, dy) = (x - cx, y - cy);
            (cx + c * dx + s * dy, cy - s * dx + c * dy)
        }
    }
}

/// Clips a polygon to the half-plane where `inside` holds; `cut` finds the
/// crossing point on an edge.
fn clip_polygon(
    poly: &[(f64, f64)],
    inside: impl Fn((f64, f64)) -> bool,
    cut: impl Fn((f64, f64), (f64, f64)) -> (f64, f64),
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (i, &cur) in poly.iter().enumerate() {
        let prev = poly[(i + poly.len() - 1) % poly.len()];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(cut(prev, cur)),
            (false, true) => {
                out.push(cut(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out
}

/// Intersection of segment `a`-`b` with the vertical line `x = at`.
fn cut_x(a: (f64, f64), b: (f64, f64), at: f64) -> (f64, f64) {
    let t = (at - a.0) / (b.0 - a.0);
    (at, a.1 + t * (b.1 - a.1))
}

fn cut_y(a: (f64, f64), b: (f64, f64), at: f64) -> (f64, f64) {
    let t = (at - a.1) / (b.1 - a.1);
    (a.0 + t * (b.0 - a.0), at)
}

/// Maps a box as the axis-aligned hull of its transformed outline, restricted
/// to the output frame. For axis-aligned steps this is the hull of the four
/// corners clamped to the frame; for rotations the rotated outline is clipped
/// first, so a corner leaving the frame does not inflate the box. Returns
/// `None` when less than one square pixel survives.
pub fn transform_box(b: &BBox, step: &Step, src: (usize, usize)) -> Option<BBox> {
    let outline = [
        (b.xmin, b.ymin),
        (b.xmax, b.ymin),
        (b.xmax, b.ymax),
        (b.xmin, b.ymax),
    ]
    .map(|p| transform_point(p, step, src));
    let (oh, ow) = step.output_shape(src);
    let (oh, ow) = (oh as f64, ow as f64);
    let mut poly = outline.to_vec();
    poly = clip_polygon(&poly, |p| p.0 >= 0.0, |a, b| cut_x(a, b, 0.0));
    poly = clip_polygon(&poly, |p| p.0 <= ow, |a, b| cut_x(a, b, ow));
    poly = clip_polygon(&poly, |p| p.1 >= 0.0, |a, b| cut_y(a, b, 0.0));
    poly = clip_polygon(&poly, |p| p.1 <= oh, |a, b| cut_y(a, b, oh));
    if poly.is_empty() {
        return None;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| {
        poly.iter().map(sel).fold(init, f)
    };
    let out = BBox {
        label: b.label,
        track: b.track,
        xmin: fold(f64::min, f64::INFINITY, |p| p.0).clamp(0.0, ow),
        ymin: fold(f64::min, f64::INFINITY, |p| p.1).clamp(0.0, oh),
        xmax: fold(f64::max, f64::NEG_INFINITY, |p| p.0).clamp(0.0, ow),
        ymax: fold(f64::max, f64::NEG_INFINITY, |p| p.1).clamp(0.0, oh),
    };
    (out.area() >= 1.0).then_some(out)
}

/// Maps a keypoint; it stays visible only while it lies inside the output frame.
pub fn transform_keypoint(k: &Keypoint, step: &Step, src: (usize, usize)) -> Keypoint {
    let (x, y) = transform_point((k.x, k.y), step, src);
    let (oh, ow) = step.output_shape(src);
    let inside = (0.0..=ow as f64).contains(&x) && (0.0..=oh as f64).contains(&y);
    Keypoint {
        x,
        y,
        visible: k.visible && inside,
    }
}
