//! Evaluation metrics: classification accuracy, box IoU, VOC-style AP/mAP,
//! and the saliency scores NSS and CC.

mod detection;
mod saliency;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detection::{
    ap_from_curve, average_precision, gt_classes, iou, mean_ap, pr_curve, Detection, GroundTruth,
    Interpolation, PrPoint,
};
pub use saliency::{cc, cc_values, nss, nss_values, SaliencyPair};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no ground truth for class {0}")]
    NoGroundTruth(u32),
    #[error("IoU threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("degenerate map: zero variance")]
    DegenerateMap,
    #[error("no fixations in map")]
    NoFixations,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

/// Fraction of positions where prediction and label agree.
pub fn accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), labels.len()));
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Metric names accepted by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Accuracy,
    #[serde(rename = "IoU")]
    Iou,
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "mAP")]
    Map,
    #[serde(rename = "NSS")]
    Nss,
    #[serde(rename = "CC")]
    Cc,
}

impl MetricKind {
    /// Case-insensitive lookup (`Accuracy`, `accuracy`, `mAP`, `map`, ...).
    pub fn parse(name: &str) -> Result<Self, MetricError> {
        match name.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(Self::Accuracy),
            "iou" => Ok(Self::Iou),
            "ap" => Ok(Self::Ap),
            "map" => Ok(Self::Map),
            "nss" => Ok(Self::Nss),
            "cc" => Ok(Self::Cc),
            _ => Err(MetricError::UnknownMetric(name.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Accuracy => "Accuracy",
            Self::Iou => "IoU",
            Self::Ap => "AP",
            Self::Map => "mAP",
            Self::Nss => "NSS",
            Self::Cc => "CC",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
