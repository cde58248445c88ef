//! Clip-consistent preprocessing.
//!
//! Random parameters are drawn once per clip from a stream keyed by
//! `(seed, clip_id)` and then applied identically to every frame, to the
//! frame-aligned saliency/fixation maps, and analytically to boxes and
//! keypoints. The fixed order is resize, crop, flip, rotate, final resize,
//! then mean subtraction in float space.

mod geometry;
mod pixels;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame_io::{Clip, Frame, FrameError, Samples};
use crate::manifest::{BBox, Keypoint, WordLabel};
use crate::rng::stream_rng;

pub use geometry::{transform_box, transform_keypoint, transform_point, Step};
pub use pixels::{warp_frame, Interpolation};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid transform config: {0}")]
    InvalidConfig(String),
    #[error("crop {crop:?} does not fit in frame {frame:?}")]
    InfeasibleCrop { crop: [usize; 2], frame: [usize; 2] },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CropType {
    Random,
    Center,
    #[default]
    None,
}

impl fmt::Display for CropType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Shapes are `[height, width]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformConfig {
    pub resize_shape: Option<[usize; 2]>,
    pub crop_shape: Option<[usize; 2]>,
    pub crop_type: CropType,
    pub flip_probability: f64,
    /// Rotation is drawn uniformly from `[-rotation_degrees, rotation_degrees]`.
    pub rotation_degrees: Option<f64>,
    /// Per-channel means on the 0..255 scale; empty disables subtraction.
    pub subtract_mean: Vec<f32>,
    pub final_shape: Option<[usize; 2]>,
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), TransformError> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(TransformError::InvalidConfig(format!(
                "flip_probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if let (Some(c), Some(r)) = (self.crop_shape, self.resize_shape) {
            if c[0] > r[0] || c[1] > r[1] {
                return Err(TransformError::InvalidConfig(format!(
                    "crop_shape {c:?} exceeds resize_shape {r:?}"
                )));
            }
        }
        for (name, shape) in [
            ("resize_shape", self.resize_shape),
            ("crop_shape", self.crop_shape),
            ("final_shape", self.final_shape),
        ] {
            if matches!(shape, Some([0, _]) | Some([_, 0])) {
                return Err(TransformError::InvalidConfig(format!(
                    "{name} has a zero side"
                )));
            }
        }
        if self.rotation_degrees.is_some_and(|d| !d.is_finite()) {
            return Err(TransformError::InvalidConfig(
                "rotation_degrees must be finite".into(),
            ));
        }
        Ok(())
    }

    fn crop_active(&self) -> Option<[usize; 2]> {
        match self.crop_type {
            CropType::None => None,
            _ => self.crop_shape,
        }
    }

    /// The deterministic variant used at evaluation time: random crops become
    /// center crops and flips/rotations are disabled.
    pub fn for_evaluation(&self) -> Self {
        Self {
            crop_type: match self.crop_type {
                CropType::Random => CropType::Center,
                other => other,
            },
            flip_probability: 0.0,
            rotation_degrees: None,
            ..self.clone()
        }
    }
}

/// Parameters drawn once for a whole clip.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampledParams {
    /// Top-left `(x, y)` of the crop window in the resized frame.
    pub crop_origin: Option<(usize, usize)>,
    pub flip_applied: bool,
    pub rotation: f64,
}

/// Draws the per-clip parameters. `frame_shape` is the source `[height, width]`.
pub fn sample_params(
    cfg: &TransformConfig,
    frame_shape: [usize; 2],
    seed: u64,
    clip_id: u64,
) -> Result<SampledParams, TransformError> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, clip_id);
    // draw every variate unconditionally so toggling one option never shifts another
    let (ux, uy, uflip, urot): (f64, f64, f64, f64) =
        (rng.random(), rng.random(), rng.random(), rng.random());
    let [rh, rw] = cfg.resize_shape.unwrap_or(frame_shape);
    let crop_origin = match cfg.crop_active() {
        None => None,
        Some([ch, cw]) => {
            if ch > rh || cw > rw {
                return Err(TransformError::InfeasibleCrop {
                    crop: [ch, cw],
                    frame: [rh, rw],
                });
            }
            let (sx, sy) = (rw - cw, rh - ch);
            Some(match cfg.crop_type {
                CropType::Center => (sx / 2, sy / 2),
                _ => (
                    ((ux * (sx + 1) as f64) as usize).min(sx),
                    ((uy * (sy + 1) as f64) as usize).min(sy),
                ),
            })
        }
    };
    let rotation = match cfg.rotation_degrees {
        Some(d) if d != 0.0 => d * (2.0 * urot - 1.0),
        _ => 0.0,
    };
    Ok(SampledParams {
        crop_origin,
        flip_applied: uflip < cfg.flip_probability,
        rotation,
    })
}

/// Resolves the concrete geometric steps for a source frame of `[height, width]`.
pub fn pipeline_steps(
    cfg: &TransformConfig,
    params: &SampledParams,
    frame_shape: [usize; 2],
) -> Vec<Step> {
    let mut steps = Vec::new();
    let mut shape = (frame_shape[0], frame_shape[1]);
    let mut push = |step: Step, shape: &mut (usize, usize)| {
        *shape = step.output_shape(*shape);
        steps.push(step);
    };
    if let Some([height, width]) = cfg.resize_shape {
        if (height, width) != shape {
            push(Step::Resize { height, width }, &mut shape);
        }
    }
    if let (Some([height, width]), Some((x, y))) = (cfg.crop_active(), params.crop_origin) {
        push(
            Step::Crop {
                x,
                y,
                height,
                width,
            },
            &mut shape,
        );
    }
    if params.flip_applied {
        push(Step::Flip, &mut shape);
    }
    if params.rotation != 0.0 {
        push(
            Step::Rotate {
                degrees: params.rotation,
            },
            &mut shape,
        );
    }
    if let Some([height, width]) = cfg.final_shape {
        if (height, width) != shape {
            push(Step::Resize { height, width }, &mut shape);
        }
    }
    steps
}

/// Annotations attached to one frame of a clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub boxes: Vec<BBox>,
    /// For each entry of `boxes`, its index in the untransformed annotation.
    pub box_sources: Vec<usize>,
    /// Untransformed indices of boxes that fell below one square pixel.
    pub dropped_boxes: Vec<usize>,
    pub keypoints: Vec<Keypoint>,
    pub word_labels: Vec<WordLabel>,
    #[serde(skip)]
    pub saliency: Option<Frame>,
    #[serde(skip)]
    pub fixations: Option<Frame>,
}

impl FrameAnnotations {
    pub fn with_boxes(boxes: Vec<BBox>) -> Self {
        Self {
            box_sources: (0..boxes.len()).collect(),
            boxes,
            ..Default::default()
        }
    }
}

/// Per-frame annotations aligned with a clip.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub frames: Vec<FrameAnnotations>,
}

impl AnnotationSet {
    pub fn empty(len: usize) -> Self {
        Self {
            frames: vec![FrameAnnotations::default(); len],
        }
    }
}

fn shape_mismatch(e: FrameError) -> TransformError {
    TransformError::ShapeMismatch(e.to_string())
}

/// Applies one geometric step to a clip and its annotations.
pub fn apply_step(
    clip: &Clip,
    ann: &AnnotationSet,
    step: &Step,
) -> Result<(Clip, AnnotationSet), TransformError> {
    if ann.frames.len() != clip.len() {
        return Err(TransformError::ShapeMismatch(format!(
            "{} annotation frames for a {}-frame clip",
            ann.frames.len(),
            clip.len()
        )));
    }
    let shape = clip.shape();
    let src = (shape.height, shape.width);
    let frames = clip
        .frames()
        .iter()
        .map(|f| warp_frame(f, step, Interpolation::Bilinear))
        .collect();
    let clip = Clip::new(frames).map_err(shape_mismatch)?;
    let warp_map = |map: &Option<Frame>, interp| -> Result<Option<Frame>, TransformError> {
        match map {
            None => Ok(None),
            Some(m) if (m.height(), m.width()) != src => Err(TransformError::ShapeMismatch(
                format!("map {} does not match frame {}", m.shape(), shape),
            )),
            Some(m) => Ok(Some(warp_frame(m, step, interp))),
        }
    };
    let mut out = Vec::with_capacity(ann.frames.len());
    for fa in &ann.frames {
        let mut next = FrameAnnotations {
            saliency: warp_map(&fa.saliency, Interpolation::Bilinear)?,
            fixations: warp_map(&fa.fixations, Interpolation::Nearest)?,
            dropped_boxes: fa.dropped_boxes.clone(),
            ..Default::default()
        };
        let mut remap = vec![None; fa.boxes.len()];
        for (i, b) in fa.boxes.iter().enumerate() {
            let source = fa.box_sources.get(i).copied().unwrap_or(i);
            match transform_box(b, step, src) {
                Some(tb) => {
                    remap[i] = Some(next.boxes.len());
                    next.boxes.push(tb);
                    next.box_sources.push(source);
                }
                None => next.dropped_boxes.push(source),
            }
        }
        next.dropped_boxes.sort_unstable();
        next.keypoints = fa
            .keypoints
            .iter()
            .map(|k| transform_keypoint(k, step, src))
            .collect();
        next.word_labels = fa
            .word_labels
            .iter()
            .filter_map(|w| {
                remap
                    .get(w.box_index)
                    .copied()
                    .flatten()
                    .map(|box_index| WordLabel {
                        word: w.word,
                        box_index,
                    })
            })
            .collect();
        out.push(next);
    }
    Ok((clip, AnnotationSet { frames: out }))
}

fn subtract_mean(frame: &Frame, means: &[f32]) -> Result<Frame, TransformError> {
    let c = frame.channels();
    if means.len() != 1 && means.len() != c {
        return Err(TransformError::InvalidConfig(format!(
            "{} means for {c}-channel frames",
            means.len()
        )));
    }
    let values = (0..frame.shape().len())
        .map(|i| frame.samples().get(i) - means[if means.len() == 1 { 0 } else { i % c }])
        .collect();
    Ok(Frame::from_raw_parts(frame.shape(), Samples::F32(values)))
}

/// Runs the full preprocessing pipeline over a clip with one parameter draw.
pub fn apply_clip(
    clip: &Clip,
    ann: &AnnotationSet,
    cfg: &TransformConfig,
    params: &SampledParams,
) -> Result<(Clip, AnnotationSet), TransformError> {
    cfg.validate()?;
    if ann.frames.len() != clip.len() {
        return Err(TransformError::ShapeMismatch(format!(
            "{} annotation frames for a {}-frame clip",
            ann.frames.len(),
            clip.len()
        )));
    }
    let shape = clip.shape();
    let steps = pipeline_steps(cfg, params, [shape.height, shape.width]);
    let mut current = (clip.clone(), ann.clone());
    for step in &steps {
        current = apply_step(&current.0, &current.1, step)?;
    }
    if cfg.subtract_mean.is_empty() {
        return Ok(current);
    }
    let frames = current
        .0
        .frames()
        .iter()
        .map(|f| subtract_mean(f, &cfg.subtract_mean))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Clip::new(frames).map_err(shape_mismatch)?, current.1))
}

/// Applies an arbitrary per-frame function to every frame of a clip, in
/// order. Annotations are not touched, so `f` should be photometric.
pub fn apply_per_frame(clip: &Clip, f: impl Fn(&Frame) -> Frame) -> Result<Clip, TransformError> {
    Clip::new(clip.frames().iter().map(f).collect()).map_err(shape_mismatch)
}
