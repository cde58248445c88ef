use super::MetricError;
use crate::frame_io::Frame;

/// A predicted saliency map with its ground truth, all of one shape.
#[derive(Debug, Clone)]
pub struct SaliencyPair {
    pub predicted: Frame,
    /// Binary map: any value > 0 is a fixation.
    pub fixations: Frame,
    pub gt_continuous: Option<Frame>,
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = if values.len() > 1 {
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// NSS over raw values: z-score `predicted` (sample standard deviation) and
/// average it over positions where `fixated` is set.
pub fn nss_values(predicted: &[f64], fixated: &[bool]) -> Result<f64, MetricError> {
    if predicted.len() != fixated.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} predicted values, {} fixation values",
            predicted.len(),
            fixated.len()
        )));
    }
    let count = fixated.iter().filter(|&&f| f).count();
    if count == 0 {
        return Err(MetricError::NoFixations);
    }
    let (mean, std) = mean_and_sample_std(predicted);
    if std == 0.0 || !std.is_finite() {
        return Err(MetricError::DegenerateMap);
    }
    let total: f64 = predicted
        .iter()
        .zip(fixated)
        .filter(|(_, &f)| f)
        .map(|(v, _)| (v - mean) / std)
        .sum();
    Ok(total / count as f64)
}

pub fn nss(pair: &SaliencyPair) -> Result<f64, MetricError> {
    if pair.predicted.shape() != pair.fixations.shape() {
        return Err(MetricError::ShapeMismatch(format!(
            "predicted {} vs fixations {}",
            pair.predicted.shape(),
            pair.fixations.shape()
        )));
    }
    let fixated: Vec<bool> = pair.fixations.to_f64().iter().map(|&v| v > 0.0).collect();
    nss_values(&pair.predicted.to_f64(), &fixated)
}

/// Pearson correlation of two equally sized value sets.
pub fn cc_values(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(MetricError::DegenerateMap);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cc(predicted: &Frame, gt: &Frame) -> Result<f64, MetricError> {
    if predicted.shape() != gt.shape() {
        return Err(MetricError::ShapeMismatch(format!(
            "predicted {} vs ground truth {}",
            predicted.shape(),
            gt.shape()
        )));
    }
    cc_values(&predicted.to_f64(), &gt.to_f64())
}
