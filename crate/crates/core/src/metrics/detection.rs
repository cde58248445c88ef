use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::manifest::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub label: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
}

/// Ground-truth boxes keyed by image id. Box labels carry the class.
pub type GroundTruth = HashMap<String, Vec<BBox>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Mean of the interpolated precision at recall 0.0, 0.1, ..., 1.0.
    #[default]
    ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoint,
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::ElevenPoint => "eleven",
            Interpolation::AllPoint => "all",
        })
    }
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eleven" | "eleven_point" | "11" => Ok(Interpolation::ElevenPoint),
            "all" | "all_point" => Ok(Interpolation::AllPoint),
            other => Err(format!("unknown interpolation `{other}`")),
        }
    }
}

/// Intersection over union; 0 for disjoint or empty boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall after each detection of `class`, in descending confidence order.
///
/// Each detection claims the unmatched ground-truth box of highest IoU (at
/// least `iou_threshold`) in its image; equal IoUs go to the lower box index.
pub fn pr_curve(
    dets: &[Detection],
    gts: &GroundTruth,
    class: u32,
    iou_threshold: f64,
) -> Result<Vec<PrPoint>, MetricError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(MetricError::InvalidThreshold(iou_threshold));
    }
    let class_gts: HashMap<&str, Vec<&BBox>> = gts
        .iter()
        .map(|(id, boxes)| {
            (
                id.as_str(),
                boxes
                    .iter()
                    .filter(|b| b.label == class)
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, b)| !b.is_empty())
        .collect();
    let n_gt: usize = class_gts.values().map(Vec::len).sum();
    if n_gt == 0 {
        return Err(MetricError::NoGroundTruth(class));
    }
    let mut ordered: Vec<&Detection> = dets.iter().filter(|d| d.label == class).collect();
    // stable sort keeps input order among equal confidences
    ordered.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut matched: HashMap<&str, Vec<bool>> = class_gts
        .iter()
        .map(|(id, b)| (*id, vec![false; b.len()]))
        .collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(ordered.len());
    for d in ordered {
        let mut best: Option<(usize, f64)> = None;
        if let (Some(boxes), Some(used)) = (
            class_gts.get(d.image_id.as_str()),
            matched.get(d.image_id.as_str()),
        ) {
            for (gi, g) in boxes.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let o = iou(&d.bbox, g);
                if o >= iou_threshold && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((gi, o));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                matched.get_mut(d.image_id.as_str()).unwrap()[gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        curve.push(PrPoint {
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_gt as f64,
        });
    }
    Ok(curve)
}

/// Average precision from a precision/recall curve.
pub fn ap_from_curve(curve: &[PrPoint], interpolation: Interpolation) -> f64 {
    match interpolation {
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|p| p.recall >= t)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        Interpolation::AllPoint => {
            let mut recall = vec![0.0];
            let mut precision = vec![0.0];
            for p in curve {
                recall.push(p.recall);
                precision.push(p.precision);
            }
            recall.push(1.0);
            precision.push(0.0);
            for i in (0..precision.len() - 1).rev() {
                precision[i] = precision[i].max(precision[i + 1]);
            }
            (1..recall.len())
                .filter(|&i| recall[i] != recall[i - 1])
                .map(|i| (recall[i] - recall[i - 1]) * precision[i])
                .sum()
        }
    }
}

pub fn average_precision(
    dets: &[Detection],
    gts: &GroundTruth,
    class: u32,
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Result<f64, MetricError> {
    Ok(ap_from_curve(
        &pr_curve(dets, gts, class, iou_threshold)?,
        interpolation,
    ))
}

/// Unweighted mean of per-class AP over the `classes` that have ground truth.
/// Returns 0 when none of them do.
pub fn mean_ap(
    dets: &[Detection],
    gts: &GroundTruth,
    classes: &[u32],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Result<f64, MetricError> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let unique: BTreeSet<u32> = classes.iter().copied().collect();
    for &class in &unique {
        match average_precision(dets, gts, class, iou_threshold, interpolation) {
            Ok(ap) => {
                total += ap;
                counted += 1;
            }
            Err(MetricError::NoGroundTruth(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if counted == 0 {
        0.0
    } else {
        total / counted as f64
    })
}

/// Every class label present in the ground truth.
pub fn gt_classes(gts: &GroundTruth) -> Vec<u32> {
    let set: BTreeSet<u32> = gts.values().flatten().map(|b| b.label).collect();
    set.into_iter().collect()
}
