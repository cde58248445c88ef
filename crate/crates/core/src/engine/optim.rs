//! SGD with momentum and weight decay, stepped once per pseudo-batch.

use serde::{Deserialize, Serialize};

use super::model::{MicroModel, Sample};
use super::EngineError;

/// Hyperparameters for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_max_norm: f64,
}

/// Momentum buffer, one entry per flattened parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SgdState {
    pub momentum: Vec<f64>,
}

impl SgdState {
    pub fn new(num_params: usize) -> Self {
        Self {
            momentum: vec![0.0; num_params],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Mean per-sample loss before the update.
    pub loss: f64,
    pub samples: usize,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// `base_lr * gamma^k` where `k` counts milestones at or below `epoch`.
pub fn schedule_lr(base_lr: f64, milestones: &[usize], gamma: f64, epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * gamma.powi(passed as i32)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean gradient over every sample of every mini-batch, plus mean loss.
///
/// Gradients are summed in sample order, so any partition of the same
/// sample sequence produces a bit-identical sum.
pub fn accumulate_gradient(
    model: &MicroModel,
    mini_batches: &[Vec<Sample>],
) -> Result<(f64, Vec<f64>, usize), EngineError> {
    let total: usize = mini_batches.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(EngineError::EmptyBatch);
    }
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for sample in mini_batches.iter().flatten() {
        let (l, g) = model.loss_and_grad(&sample.input.features(), &sample.target)?;
        loss += l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let n = total as f64;
    for v in &mut grad {
        *v /= n;
    }
    Ok((loss / n, grad, total))
}

/// One optimizer step over a pseudo-batch made of `mini_batches`.
///
/// The accumulated mean gradient is clipped to `grad_max_norm` (global L2),
/// weight decay is added, and the momentum update `buf = mu*buf + d`,
/// `theta -= lr*buf` is applied.
pub fn accumulate_step(
    model: &mut MicroModel,
    mini_batches: &[Vec<Sample>],
    state: &mut SgdState,
    settings: &StepSettings,
) -> Result<StepReport, EngineError> {
    let (loss, mut grad, samples) = accumulate_gradient(model, mini_batches)?;
    if state.momentum.len() != grad.len() {
        return Err(EngineError::ShapeMismatch(format!(
            "optimizer state has {} entries for {} parameters",
            state.momentum.len(),
            grad.len()
        )));
    }
    let grad_norm = l2_norm(&grad);
    let mut clipped_norm = grad_norm;
    if grad_norm > settings.grad_max_norm {
        let scale = settings.grad_max_norm / grad_norm;
        for g in &mut grad {
            *g *= scale;
        }
        clipped_norm = l2_norm(&grad);
    }
    let mut params = model.params();
    for ((p, g), buf) in params.iter_mut().zip(&grad).zip(&mut state.momentum) {
        let d = g + settings.weight_decay * *p;
        *buf = settings.momentum * *buf + d;
        *p -= settings.lr * *buf;
    }
    model.set_params(&params)?;
    Ok(StepReport {
        loss,
        samples,
        grad_norm,
        clipped_norm,
    })
}
