use crate::frame_io::{Frame, Samples, Shape};

use super::geometry::Step;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    /// Half-pixel-center sampling; edges clamp for resize and read as zero for rotation.
    Bilinear,
}

fn bilinear(frame: &Frame, sx: f64, sy: f64, c: usize) -> f32 {
    let (h, w) = (frame.height(), frame.width());
    let u = (sx - 0.5).max(0.0);
    let v = (sy - 0.5).max(0.0);
    let x0 = (u.floor() as usize).min(w - 1);
    let y0 = (v.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (u - x0 as f64).clamp(0.0, 1.0) as f32;
    let fy = (v - y0 as f64).clamp(0.0, 1.0) as f32;
    let top = frame.at(y0, x0, c) * (1.0 - fx) + frame.at(y0, x1, c) * fx;
    let bottom = frame.at(y1, x0, c) * (1.0 - fx) + frame.at(y1, x1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest(frame: &Frame, sx: f64, sy: f64, c: usize) -> f32 {
    let x = (sx.floor().max(0.0) as usize).min(frame.width() - 1);
    let y = (sy.floor().max(0.0) as usize).min(frame.height() - 1);
    frame.at(y, x, c)
}

/// Builds an output frame by evaluating `sample(y, x, c)` at every output pixel,
/// keeping the input's sample type (8-bit results are rounded and clamped).
fn generate(
    like: &Frame,
    shape: Shape,
    mut sample: impl FnMut(usize, usize, usize) -> f32,
) -> Frame {
    let mut values = Vec::with_capacity(shape.len());
    for y in 0..shape.height {
        for x in 0..shape.width {
            for c in 0..shape.channels {
                values.push(sample(y, x, c));
            }
        }
    }
    let samples = match like.samples() {
        Samples::U8(_) => Samples::U8(
            values
                .into_iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect(),
        ),
        Samples::F32(_) => Samples::F32(values),
    };
    Frame::from_raw_parts(shape, samples)
}

/// Applies one geometric step to the pixels of `frame`.
pub fn warp_frame(frame: &Frame, step: &Step, interp: Interpolation) -> Frame {
    let src = frame.shape();
    let (oh, ow) = step.output_shape((src.height, src.width));
    let out_shape = Shape::new(oh, ow, src.channels);
    let sample = |sx: f64, sy: f64, c: usize| match interp {
        Interpolation::Nearest => nearest(frame, sx, sy, c),
        Interpolation::Bilinear => bilinear(frame, sx, sy, c),
    };
    match *step {
        Step::Resize { height, width } => {
            let kx = src.width as f64 / width as f64;
            let ky = src.height as f64 / height as f64;
            generate(frame, out_shape, |y, x, c| {
                sample((x as f64 + 0.5) * kx, (y as f64 + 0.5) * ky, c)
            })
        }
        Step::Crop { x: ox, y: oy, .. } => {
            generate(frame, out_shape, |y, x, c| frame.at(y + oy, x + ox, c))
        }
        Step::Flip => generate(frame, out_shape, |y, x, c| {
            frame.at(y, src.width - 1 - x, c)
        }),
        Step::Rotate { degrees } => {
            let (s, co) = degrees.to_radians().sin_cos();
            let (cx, cy) = (src.width as f64 / 2.0, src.height as f64 / 2.0);
            generate(frame, out_shape, |y, x, c| {
                // inverse rotation of the output pixel center
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let sx = cx + co * dx - s * dy;
                let sy = cy + s * dx + co * dy;
                if sx < 0.0 || sy < 0.0 || sx >= src.width as f64 || sy >= src.height as f64 {
                    0.0
                } else {
                    sample(sx, sy, c)
                }
            })
        }
    }
}
