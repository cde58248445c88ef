//! Independent reference implementations the library is checked against.
//! Each one is written from the definition, not from the library code.

use vippipe::clip_sampler::{ClipConfig, ClipMode};
use vippipe::engine::{MicroModel, ModelKind, Sample, Target};
use vippipe::manifest::BBox;
use vippipe::transforms::Step;

// ---------------------------------------------------------------- clips

/// Every clip `plan_clips` should emit, or `None` where it must refuse.
/// `offset` stands in for the configured or drawn offset.
pub fn enumerate_clips(
    video_length: usize,
    cfg: &ClipConfig,
    offset: usize,
) -> Option<Vec<Vec<usize>>> {
    let l = cfg.clip_length;
    if l == 0 || l < -1 || cfg.num_clips < -1 {
        return None;
    }
    if l > 0 && cfg.clip_stride <= -l {
        return None;
    }
    if cfg.mode == ClipMode::Uniform && cfg.num_clips > 1 {
        return None;
    }
    if offset >= video_length {
        return None;
    }
    if l == -1 || cfg.num_clips == 0 {
        return Some(vec![(0..video_length).collect()]);
    }
    let l = l as usize;
    let last = video_length - 1;

    if cfg.mode == ClipMode::Uniform {
        if l == 1 {
            return Some(vec![vec![offset]]);
        }
        let span = (last - offset) as f64;
        let clip = (0..l)
            .map(|k| offset + (k as f64 * span / (l - 1) as f64 + 0.5).floor() as usize)
            .collect();
        return Some(vec![clip]);
    }

    // every window, then keep what the definition allows
    let windows: Vec<(usize, Vec<usize>)> = (offset..video_length)
        .map(|s| (s, (s..s + l).collect::<Vec<_>>()))
        .collect();
    let fits = |w: &Vec<usize>| w.iter().all(|&i| i <= last);

    if !windows.iter().any(|(_, w)| fits(w)) {
        let padded = (offset..offset + l).map(|i| i.min(last)).collect();
        return Some(vec![padded]);
    }
    if cfg.num_clips == -1 {
        let step = (cfg.clip_length + cfg.clip_stride) as usize;
        return Some(
            windows
                .into_iter()
                .filter(|(s, w)| (s - offset).is_multiple_of(step) && fits(w))
                .map(|(_, w)| w)
                .collect(),
        );
    }
    let n = cfg.num_clips as usize;
    let feasible: Vec<(usize, Vec<usize>)> = windows.into_iter().filter(|(_, w)| fits(w)).collect();
    let first = feasible.first().unwrap().0;
    let final_start = feasible.last().unwrap().0;
    Some(
        (0..n)
            .map(|k| {
                let start = if n == 1 {
                    first
                } else {
                    first
                        + (k as f64 * (final_start - first) as f64 / (n - 1) as f64 + 0.5).floor()
                            as usize
                };
                feasible
                    .iter()
                    .find(|(s, _)| *s == start)
                    .unwrap()
                    .1
                    .clone()
            })
            .collect(),
    )
}

// ---------------------------------------------------------------- masks

/// Binary mask of the pixels whose centers fall inside `b`.
pub fn rasterize(b: &BBox, h: usize, w: usize) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            m[y * w + x] = cx > b.xmin && cx < b.xmax && cy > b.ymin && cy < b.ymax;
        }
    }
    m
}

/// Where the center of output pixel `(x, y)` came from in the step's input.
fn inverse(step: &Step, x: f64, y: f64, src: (usize, usize), dst: (usize, usize)) -> (f64, f64) {
    let (sh, sw) = (src.0 as f64, src.1 as f64);
    match *step {
        Step::Resize { .. } => (x * sw / dst.1 as f64, y * sh / dst.0 as f64),
        Step::Crop { x: ox, y: oy, .. } => (x + ox as f64, y + oy as f64),
        Step::Flip => (sw - x, y),
        Step::Rotate { degrees } => {
            // forward map is a counter-clockwise turn in image coordinates
            let t = degrees.to_radians();
            let (cx, cy) = (sw / 2.0, sh / 2.0);
            let (dx, dy) = (x - cx, y - cy);
            (
                cx + t.cos() * dx - t.sin() * dy,
                cy + t.sin() * dx + t.cos() * dy,
            )
        }
    }
}

/// Nearest-neighbour warp of a mask through one step.
pub fn warp_mask(mask: &[bool], src: (usize, usize), step: &Step) -> (Vec<bool>, (usize, usize)) {
    let dst = match *step {
        Step::Resize { height, width } | Step::Crop { height, width, .. } => (height, width),
        Step::Flip | Step::Rotate { .. } => src,
    };
    let mut out = vec![false; dst.0 * dst.1];
    for y in 0..dst.0 {
        for x in 0..dst.1 {
            let (sx, sy) = inverse(step, x as f64 + 0.5, y as f64 + 0.5, src, dst);
            if sx < 0.0 || sy < 0.0 || sx >= src.1 as f64 || sy >= src.0 as f64 {
                continue;
            }
            out[y * dst.1 + x] = mask[sy as usize * src.1 + sx as usize];
        }
    }
    (out, dst)
}

/// Tight `(xmin, ymin, xmax, ymax)` of the set pixels, as pixel edges.
pub fn tight_box(mask: &[bool], shape: (usize, usize)) -> Option<(f64, f64, f64, f64)> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..shape.0 {
        for x in 0..shape.1 {
            if mask[y * shape.1 + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    (x0 != usize::MAX).then_some((x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

/// Largest per-side disagreement between a box and a tight mask box.
pub fn side_error(b: &BBox, t: (f64, f64, f64, f64)) -> f64 {
    [
        (b.xmin - t.0),
        (b.ymin - t.1),
        (b.xmax - t.2),
        (b.ymax - t.3),
    ]
    .iter()
    .fold(0.0f64, |m, d| m.max(d.abs()))
}

// ---------------------------------------------------------------- detection

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.xmax.min(b.xmax) - a.xmin.max(b.xmin);
    let h = a.ymax.min(b.ymax) - a.ymin.max(b.ymin);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / ((a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter)
}

/// One class's detections as `(image, box, confidence)` and ground truth as `(image, box)`.
pub struct DetCase {
    pub dets: Vec<(usize, BBox, f64)>,
    pub gts: Vec<(usize, BBox)>,
}

/// True-positive flags for the detections in ranked order.
fn matches(ranked: &[&(usize, BBox, f64)], gts: &[(usize, BBox)], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|(img, b, _)| {
            let mut best: Option<(usize, f64)> = None;
            for (g, (gimg, gb)) in gts.iter().enumerate() {
                if gimg != img || used[g] {
                    continue;
                }
                let v = box_iou(b, gb);
                if v >= thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// Precision and recall of every ranked prefix, each computed from scratch.
pub fn pr_by_prefix(case: &DetCase, thr: f64) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..case.dets.len()).collect();
    // stable: equal confidences keep input order
    order.sort_by(|&a, &b| case.dets[b].2.partial_cmp(&case.dets[a].2).unwrap());
    let ranked: Vec<&(usize, BBox, f64)> = order.iter().map(|&i| &case.dets[i]).collect();
    (1..=ranked.len())
        .map(|k| {
            let tp = matches(&ranked[..k], &case.gts, thr)
                .iter()
                .filter(|&&t| t)
                .count() as f64;
            (tp / k as f64, tp / case.gts.len() as f64)
        })
        .collect()
}

pub fn ap_eleven(pr: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|t| {
            let r = t as f64 / 10.0;
            pr.iter()
                .filter(|(_, rec)| *rec >= r - 1e-12)
                .map(|(p, _)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

pub fn ap_all(pr: &[(f64, f64)]) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (k, &(_, r)) in pr.iter().enumerate() {
        let envelope = pr[k..].iter().map(|(p, _)| *p).fold(0.0, f64::max);
        area += (r - prev_recall) * envelope;
        prev_recall = r;
    }
    area
}

// ---------------------------------------------------------------- models

/// Loss gradient w.r.t. the outputs, written out per model.
fn output_residual(kind: ModelKind, y: &[f64], target: &Target) -> (f64, Vec<f64>) {
    match (kind, target) {
        (ModelKind::LinearRegressor, Target::Values(t)) => {
            let r: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
            (0.5 * r.iter().map(|v| v * v).sum::<f64>(), r)
        }
        (ModelKind::LinearRegressor, Target::Class(c)) => {
            let t: Vec<f64> = (0..y.len())
                .map(|i| if i == *c as usize { 1.0 } else { 0.0 })
                .collect();
            output_residual(kind, y, &Target::Values(t))
        }
        (ModelKind::LogisticClipClassifier, Target::Class(c)) => {
            let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = y.iter().map(|v| (v - m).exp()).sum();
            let p: Vec<f64> = y.iter().map(|v| (v - m).exp() / z).collect();
            let loss = -p[*c as usize].ln();
            let r = p
                .iter()
                .enumerate()
                .map(|(i, pi)| pi - f64::from(i == *c as usize))
                .collect();
            (loss, r)
        }
        _ => panic!("unsupported target"),
    }
}

/// The single large-batch SGD step over all `samples`, from scratch.
pub fn large_batch_step(
    model: &MicroModel,
    samples: &[Sample],
    momentum_buf: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    max_norm: f64,
) -> Vec<f64> {
    let (o, i) = (model.outputs, model.inputs);
    let mut gw = vec![vec![0.0; i]; o];
    let mut gb = vec![0.0; o];
    for s in samples {
        let x = s.input.features();
        let y: Vec<f64> = (0..o)
            .map(|r| model.bias[r] + (0..i).map(|c| model.weight[r * i + c] * x[c]).sum::<f64>())
            .collect();
        let (_, res) = output_residual(model.kind, &y, &s.target);
        for r in 0..o {
            for c in 0..i {
                gw[r][c] += res[r] * x[c];
            }
            gb[r] += res[r];
        }
    }
    let n = samples.len() as f64;
    let mut grad: Vec<f64> = gw.into_iter().flatten().chain(gb).map(|g| g / n).collect();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grad.iter_mut().for_each(|g| *g *= max_norm / norm);
    }
    let theta: Vec<f64> = model.weight.iter().chain(&model.bias).copied().collect();
    theta
        .iter()
        .zip(&grad)
        .zip(momentum_buf.iter_mut())
        .map(|((p, g), buf)| {
            *buf = momentum * *buf + g + weight_decay * p;
            p - lr * *buf
        })
        .collect()
}

/// Central finite-difference gradient of the per-sample loss.
pub fn finite_difference(model: &MicroModel, x: &[f64], target: &Target, h: f64) -> Vec<f64> {
    let base = model.params();
    (0..base.len())
        .map(|k| {
            let mut m = model.clone();
            let mut p = base.clone();
            p[k] = base[k] + h;
            m.set_params(&p).unwrap();
            let up = m.loss(x, target).unwrap();
            p[k] = base[k] - h;
            m.set_params(&p).unwrap();
            let down = m.loss(x, target).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max |b|`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
