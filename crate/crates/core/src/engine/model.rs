//! Built-in micro-models: a linear map followed by either squared error or
//! softmax cross-entropy. Both have closed-form per-sample gradients.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::frame_io::Clip;
use crate::rng::stream_rng;
use crate::transforms::AnnotationSet;

/// Length of the vector produced by [`clip_features`].
pub const CLIP_FEATURE_DIM: usize = 7;

/// Half-width of the uniform range used for fresh weights.
pub const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Squared error against a target vector.
    LinearRegressor,
    /// Softmax cross-entropy against a class index.
    LogisticClipClassifier,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LinearRegressor => "linear_regressor",
            ModelKind::LogisticClipClassifier => "logistic_clip_classifier",
        }
    }

    /// Loss name the model trains with, as spelled in configs.
    pub fn loss_name(&self) -> &'static str {
        match self {
            ModelKind::LinearRegressor => "MSE",
            ModelKind::LogisticClipClassifier => "M_XENTROPY",
        }
    }

    pub fn accepts_loss(&self, loss: &str) -> bool {
        let loss = loss.to_ascii_uppercase();
        match self {
            ModelKind::LinearRegressor => matches!(loss.as_str(), "MSE" | "L2"),
            ModelKind::LogisticClipClassifier => {
                matches!(loss.as_str(), "M_XENTROPY" | "XENTROPY" | "CROSS_ENTROPY")
            }
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear_regressor" => Ok(ModelKind::LinearRegressor),
            "logistic_clip_classifier" => Ok(ModelKind::LogisticClipClassifier),
            other => Err(EngineError::UnknownModel(other.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Model input. Clips are reduced to [`clip_features`] on the fly, so a
/// mini-batch may mix clips of any length and frame size.
#[derive(Debug, Clone)]
pub enum Input {
    Features(Vec<f64>),
    Clip {
        clip: Clip,
        annotations: AnnotationSet,
    },
}

impl Input {
    pub fn features(&self) -> Vec<f64> {
        match self {
            Input::Features(f) => f.clone(),
            Input::Clip { clip, annotations } => clip_features(clip, annotations),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(u32),
    Values(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Input,
    pub target: Target,
}

impl Sample {
    pub fn new(features: Vec<f64>, target: Target) -> Self {
        Self {
            input: Input::Features(features),
            target,
        }
    }
}

/// Mean RGB plus box-center statistics of a clip.
///
/// u8 samples are scaled to `[-0.5, 0.5]`; float samples (already
/// mean-subtracted) are only divided by 255. Single-channel clips are
/// replicated across RGB. Box centers are normalized by the frame size and
/// shifted by -0.5; a clip without boxes contributes zeros.
pub fn clip_features(clip: &Clip, annotations: &AnnotationSet) -> Vec<f64> {
    let shape = clip.shape();
    let channels = shape.channels;
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for frame in clip.frames() {
        let samples = frame.samples();
        for p in 0..shape.height * shape.width {
            for (k, sum) in sums.iter_mut().enumerate() {
                let c = if channels == 1 {
                    0
                } else {
                    k.min(channels - 1)
                };
                *sum += samples.get(p * channels + c) as f64;
            }
        }
        count += shape.height * shape.width;
    }
    let shift = if clip.is_float() { 0.0 } else { 0.5 };
    let mut features: Vec<f64> = sums
        .iter()
        .map(|s| s / count.max(1) as f64 / 255.0 - shift)
        .collect();

    let centers: Vec<(f64, f64)> = annotations
        .frames
        .iter()
        .flat_map(|f| f.boxes.iter())
        .map(|b| {
            let (cx, cy) = b.center();
            (
                cx / shape.width as f64 - 0.5,
                cy / shape.height as f64 - 0.5,
            )
        })
        .collect();
    if centers.is_empty() {
        features.extend([0.0; 4]);
    } else {
        let n = centers.len() as f64;
        let mx = centers.iter().map(|c| c.0).sum::<f64>() / n;
        let my = centers.iter().map(|c| c.1).sum::<f64>() / n;
        let sx = (centers.iter().map(|c| (c.0 - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (centers.iter().map(|c| (c.1 - my).powi(2)).sum::<f64>() / n).sqrt();
        features.extend([mx, my, sx, sy]);
    }
    features
}

/// `y = W x + b` with `W` stored row-major as `[outputs, inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroModel {
    pub kind: ModelKind,
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MicroModel {
    pub fn zeros(kind: ModelKind, inputs: usize, outputs: usize) -> Self {
        Self {
            kind,
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `[-INIT_SCALE, INIT_SCALE]`, zero bias.
    pub fn fresh(kind: ModelKind, inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut m = Self::zeros(kind, inputs, outputs);
        let mut rng = stream_rng(seed, 0);
        for w in &mut m.weight {
            *w = INIT_SCALE * (2.0 * rng.random::<f64>() - 1.0);
        }
        m
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Named parameter tensors with their shapes, in payload order.
    pub fn param_layout(&self) -> [(&'static str, Vec<usize>); 2] {
        [
            ("weight", vec![self.outputs, self.inputs]),
            ("bias", vec![self.outputs]),
        ]
    }

    /// Parameters flattened as `weight` then `bias`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), EngineError> {
        if params.len() != self.num_params() {
            return Err(EngineError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let (w, b) = params.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), EngineError> {
        if x.len() != self.inputs {
            return Err(EngineError::ShapeMismatch(format!(
                "model takes {} features, got {}",
                self.inputs,
                x.len()
            )));
        }
        Ok(())
    }

    /// Raw linear outputs.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, EngineError> {
        self.check_input(x)?;
        Ok((0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o]
            })
            .collect())
    }

    /// Index of the largest output; ties go to the lower index.
    pub fn predict_class(&self, x: &[f64]) -> Result<u32, EngineError> {
        let y = self.forward(x)?;
        let mut best = 0;
        for (i, v) in y.iter().enumerate() {
            if *v > y[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }

    fn residual(&self, y: &[f64], target: &Target) -> Result<(f64, Vec<f64>), EngineError> {
        match self.kind {
            ModelKind::LinearRegressor => {
                let t = match target {
                    Target::Values(v) => v.clone(),
                    Target::Class(c) => one_hot(*c, self.outputs)?,
                };
                if t.len() != self.outputs {
                    return Err(EngineError::ShapeMismatch(format!(
                        "target has {} values for {} outputs",
                        t.len(),
                        self.outputs
                    )));
                }
                let r: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a - b).collect();
                let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
                Ok((loss, r))
            }
            ModelKind::LogisticClipClassifier => {
                let class = match target {
                    Target::Class(c) => *c as usize,
                    Target::Values(_) => {
                        return Err(EngineError::InvalidConfig(
                            "logistic_clip_classifier needs class targets".into(),
                        ))
                    }
                };
                if class >= self.outputs {
                    return Err(EngineError::ShapeMismatch(format!(
                        "class {class} outside {} outputs",
                        self.outputs
                    )));
                }
                let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                let loss = z.ln() + max - y[class];
                let mut r: Vec<f64> = exp.iter().map(|e| e / z).collect();
                r[class] -= 1.0;
                Ok((loss, r))
            }
        }
    }

    /// Per-sample loss.
    pub fn loss(&self, x: &[f64], target: &Target) -> Result<f64, EngineError> {
        let y = self.forward(x)?;
        Ok(self.residual(&y, target)?.0)
    }

    /// Per-sample loss and its gradient w.r.t. the flattened parameters.
    ///
    /// Both losses have `dL/dy = r`, so `dL/dW = r x^T` and `dL/db = r`.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        target: &Target,
    ) -> Result<(f64, Vec<f64>), EngineError> {
        let y = self.forward(x)?;
        let (loss, r) = self.residual(&y, target)?;
        let mut g = Vec::with_capacity(self.num_params());
        for ro in &r {
            g.extend(x.iter().map(|v| ro * v));
        }
        g.extend_from_slice(&r);
        Ok((loss, g))
    }
}

fn one_hot(class: u32, n: usize) -> Result<Vec<f64>, EngineError> {
    if class as usize >= n {
        return Err(EngineError::ShapeMismatch(format!(
            "class {class} outside {n} outputs"
        )));
    }
    let mut v = vec![0.0; n];
    v[class as usize] = 1.0;
    Ok(v)
}
