//! One check per acceptance criterion. Each returns a short summary on
//! success and the first failure otherwise; the acceptance runner prints
//! them and the topical test files assert them.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_yaml::Value;
use vippipe::clip_sampler::{plan_clips, ClipConfig, ClipMode};
use vippipe::engine::config::{known_keys, load_config, SNAPSHOT_FILE_NAME};
use vippipe::engine::train::{checkpoint_path, LOG_FILE_NAME, SCALARS_FILE_NAME};
use vippipe::engine::{
    accumulate_step, evaluate, evaluate_with, train, Input, MicroModel, ModelKind, PretrainedSpec,
    RunConfig, Sample, SgdState, StepSettings, Target,
};
use vippipe::frame_io::{decode_image, decode_vipc, encode_image, encode_vipc, Clip, Frame};
use vippipe::manifest::BBox;
use vippipe::metrics::{
    accuracy, average_precision, cc_values, iou, mean_ap, nss_values, Detection, GroundTruth,
    Interpolation,
};
use vippipe::rng::stream_rng;
use vippipe::transforms::{
    apply_clip, apply_step, pipeline_steps, sample_params, transform_box, warp_frame,
    AnnotationSet, CropType, FrameAnnotations, Interpolation as Interp, Step, TransformConfig,
};

use super::fixtures;
use super::oracles::{self, DetCase};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ------------------------------------------------------------ clip planner

pub const CLIP_SWEEP_BUDGET: Duration = Duration::from_secs(10);

pub fn clip_sweep() -> Outcome {
    let start = Instant::now();
    let mut cases = 0usize;
    for mode in [ClipMode::Contiguous, ClipMode::Uniform] {
        for video_length in 1..=64usize {
            for clip_length in std::iter::once(-1).chain(1..=8i64) {
                for clip_stride in -3..=8i64 {
                    for num_clips in -1..=4i64 {
                        for (clip_offset, random_offset) in
                            [(0, false), (2, false), (7, false), (0, true)]
                        {
                            let cfg = ClipConfig {
                                clip_length,
                                num_clips,
                                clip_stride,
                                clip_offset,
                                random_offset,
                                mode,
                            };
                            let seed = cases as u64;
                            let got = plan_clips(video_length, &cfg, seed).ok().map(|p| p.clips);
                            // a drawn offset is whatever the first clip starts at,
                            // provided it lies in the feasible range
                            let offset = match (&got, random_offset) {
                                (Some(clips), true) if clip_length > 0 && num_clips != 0 => {
                                    let o = clips[0][0];
                                    ensure!(
                                        o <= video_length.saturating_sub(clip_length as usize),
                                        "drawn offset {o} out of range for {video_length} frames, {cfg:?}"
                                    );
                                    o
                                }
                                (_, true) => 0,
                                _ => clip_offset,
                            };
                            let want = oracles::enumerate_clips(video_length, &cfg, offset);
                            ensure!(
                                got == want,
                                "video_length {video_length}, {cfg:?}: got {got:?}, want {want:?}"
                            );
                            if let Some(clips) = &got {
                                let len = if clip_length == -1 || num_clips == 0 {
                                    video_length
                                } else {
                                    clip_length as usize
                                };
                                ensure!(
                                    clips.iter().all(|c| c.len() == len),
                                    "unequal clip lengths for {cfg:?}"
                                );
                                let again = plan_clips(video_length, &cfg, seed).unwrap().clips;
                                ensure!(&again == clips, "plan not deterministic for {cfg:?}");
                            }
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        elapsed < CLIP_SWEEP_BUDGET,
        "sweep took {elapsed:.2?}, budget {CLIP_SWEEP_BUDGET:?}"
    );
    Ok(format!(
        "{cases} configurations, 100% agreement, {elapsed:.2?}"
    ))
}

// ------------------------------------------------------------- transforms

pub const COMMUTATION_TRIALS: usize = 1000;
pub const COMMUTATION_TOLERANCE_PX: f64 = 1.0;

/// A random pipeline over a random frame size. Resizes only shrink.
pub fn random_pipeline(rng: &mut impl Rng) -> (TransformConfig, [usize; 2]) {
    let (h, w) = (
        rng.random_range(24..=64usize),
        rng.random_range(24..=64usize),
    );
    let mut cfg = TransformConfig::default();
    let mut shape = [h, w];
    if rng.random_bool(0.5) {
        shape = [
            rng.random_range(h * 3 / 4..=h),
            rng.random_range(w * 3 / 4..=w),
        ];
        cfg.resize_shape = Some(shape);
    }
    if rng.random_bool(0.7) {
        shape = [
            rng.random_range(shape[0] / 2..=shape[0]),
            rng.random_range(shape[1] / 2..=shape[1]),
        ];
        cfg.crop_shape = Some(shape);
        cfg.crop_type = if rng.random_bool(0.8) {
            CropType::Random
        } else {
            CropType::Center
        };
    }
    cfg.flip_probability = 0.5;
    if rng.random_bool(0.5) {
        cfg.rotation_degrees = Some(rng.random_range(1.0..30.0));
    }
    if rng.random_bool(0.5) {
        cfg.final_shape = Some([
            rng.random_range(shape[0] * 3 / 4..=shape[0]),
            rng.random_range(shape[1] * 3 / 4..=shape[1]),
        ]);
    }
    (cfg, [h, w])
}

/// An integer-aligned box at least 4 px on a side.
pub fn random_box(rng: &mut impl Rng, h: usize, w: usize) -> BBox {
    let x0 = rng.random_range(0..=w - 4);
    let y0 = rng.random_range(0..=h - 4);
    let x1 = rng.random_range(x0 + 4..=w);
    let y1 = rng.random_range(y0 + 4..=h);
    BBox::new(0, x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

fn mask_frame(mask: &[bool], h: usize, w: usize) -> Frame {
    Frame::from_u8(
        h,
        w,
        1,
        mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
    )
    .unwrap()
}

fn random_clip(rng: &mut impl Rng, len: usize, h: usize, w: usize, c: usize) -> Clip {
    let frames = (0..len)
        .map(|_| Frame::from_u8(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap())
        .collect();
    Clip::new(frames).unwrap()
}

/// Masks are rasterized this many times finer per axis than the frame, with
/// every step scaled to match. At the native grid a rotated corner can lose
/// more than a pixel to pixel-center sampling alone.
pub const SUPERSAMPLE: usize = 8;

fn supersampled(step: &Step, k: usize) -> Step {
    match *step {
        Step::Resize { height, width } => Step::Resize {
            height: height * k,
            width: width * k,
        },
        Step::Crop {
            x,
            y,
            height,
            width,
        } => Step::Crop {
            x: x * k,
            y: y * k,
            height: height * k,
            width: width * k,
        },
        other => other,
    }
}

pub fn transform_commutation() -> Outcome {
    let k = SUPERSAMPLE;
    let kf = k as f64;
    let mut rng = stream_rng(2024, 1);
    let (mut checked, mut dropped, mut slivers, mut worst) = (0usize, 0usize, 0usize, 0.0f64);
    let mut attempts = 0u64;
    while checked < COMMUTATION_TRIALS {
        attempts += 1;
        ensure!(
            attempts < 2 * COMMUTATION_TRIALS as u64,
            "too many skipped trials"
        );
        let (cfg, [h, w]) = random_pipeline(&mut rng);
        let b = random_box(&mut rng, h, w);
        let params = sample_params(&cfg, [h, w], attempts, attempts).map_err(|e| e.to_string())?;
        let steps = pipeline_steps(&cfg, &params, [h, w]);

        // analytic route, through the full clip pipeline
        let clip = random_clip(&mut rng, 1, h, w, 3);
        let ann = AnnotationSet {
            frames: vec![FrameAnnotations::with_boxes(vec![b])],
        };
        let (_, out) = apply_clip(&clip, &ann, &cfg, &params).map_err(|e| e.to_string())?;
        let out = &out.frames[0];
        let Some(tb) = out.boxes.first() else {
            ensure!(
                out.dropped_boxes == [0],
                "box vanished without being recorded as dropped"
            );
            dropped += 1;
            continue;
        };
        // a region thinner than a pixel at any stage has no meaningful
        // tight mask box: its rotated tip thins out over many pixels
        let mut shape = (h, w);
        let mut current = Some(b);
        let mut thin = false;
        for step in &steps {
            current = current.and_then(|c| transform_box(&c, step, shape));
            shape = step.output_shape(shape);
            thin |= current.is_some_and(|c| c.width() < 1.0 || c.height() < 1.0);
        }
        if thin {
            slivers += 1;
            continue;
        }

        let fine_box = BBox::new(0, b.xmin * kf, b.ymin * kf, b.xmax * kf, b.ymax * kf);
        let mask = oracles::rasterize(&fine_box, h * k, w * k);
        // pixel route 1: the library's nearest-neighbour warp
        let mut frame = mask_frame(&mask, h * k, w * k);
        // pixel route 2: the independent warp
        let mut m = (mask, (h * k, w * k));
        for step in &steps {
            let fine = supersampled(step, k);
            frame = warp_frame(&frame, &fine, Interp::Nearest);
            m = oracles::warp_mask(&m.0, m.1, &fine);
        }
        let lib_mask: Vec<bool> = frame.to_f64().iter().map(|&v| v > 0.0).collect();
        let scale = |t: (f64, f64, f64, f64)| (t.0 / kf, t.1 / kf, t.2 / kf, t.3 / kf);
        let (Some(lib_box), Some(oracle_box)) = (
            oracles::tight_box(&lib_mask, (frame.height(), frame.width())).map(scale),
            oracles::tight_box(&m.0, m.1).map(scale),
        ) else {
            return Err(format!(
                "trial {attempts}: box {tb:?} survived but its mask is empty, {steps:?}"
            ));
        };
        let err = oracles::side_error(tb, lib_box).max(oracles::side_error(tb, oracle_box));
        worst = worst.max(err);
        ensure!(
            err <= COMMUTATION_TOLERANCE_PX,
            "trial {attempts}: box {tb:?} vs mask {lib_box:?} / oracle {oracle_box:?} (error {err:.3} px), {steps:?}"
        );
        checked += 1;
    }

    // flip twice is the identity on pixels and boxes
    for t in 0..200u64 {
        let (h, w) = (rng.random_range(1..=40usize), rng.random_range(1..=40usize));
        let clip = random_clip(&mut rng, 3, h, w, if t % 2 == 0 { 3 } else { 1 });
        // quarter-pixel coordinates keep W - (W - x) exact
        let q = |r: &mut rand_chacha::ChaCha8Rng, n: usize| r.random_range(0..=4 * n) as f64 / 4.0;
        let boxes: Vec<BBox> = (0..3)
            .map(|_| {
                let (xa, xb, ya, yb) = (
                    q(&mut rng, w),
                    q(&mut rng, w),
                    q(&mut rng, h),
                    q(&mut rng, h),
                );
                BBox::new(
                    1,
                    xa.min(xb),
                    ya.min(yb),
                    xa.max(xb) + 1.0,
                    ya.max(yb) + 1.0,
                )
            })
            .map(|mut b| {
                b.xmax = b.xmax.min(w as f64);
                b.ymax = b.ymax.min(h as f64);
                b
            })
            .filter(|b| b.area() >= 1.0)
            .collect();
        let ann = AnnotationSet {
            frames: vec![FrameAnnotations::with_boxes(boxes); 3],
        };
        let once = apply_step(&clip, &ann, &Step::Flip).map_err(|e| e.to_string())?;
        let twice = apply_step(&once.0, &once.1, &Step::Flip).map_err(|e| e.to_string())?;
        ensure!(twice.0 == clip, "flip twice changed pixels ({h}x{w})");
        ensure!(twice.1 == ann, "flip twice changed boxes ({h}x{w})");
    }

    // step-by-step application equals the composed pipeline
    for t in 0..200u64 {
        let (cfg, [h, w]) = random_pipeline(&mut rng);
        let params = sample_params(&cfg, [h, w], 7, t).map_err(|e| e.to_string())?;
        let clip = random_clip(&mut rng, 2, h, w, 3);
        let b = random_box(&mut rng, h, w);
        let ann = AnnotationSet {
            frames: vec![FrameAnnotations::with_boxes(vec![b]); 2],
        };
        let composed = apply_clip(&clip, &ann, &cfg, &params).map_err(|e| e.to_string())?;
        let mut stepwise = (clip.clone(), ann.clone());
        let mut analytic = Some(b);
        let mut shape = (h, w);
        for step in pipeline_steps(&cfg, &params, [h, w]) {
            stepwise = apply_step(&stepwise.0, &stepwise.1, &step).map_err(|e| e.to_string())?;
            analytic = analytic.and_then(|b| transform_box(&b, &step, shape));
            shape = step.output_shape(shape);
        }
        ensure!(
            composed.0 == stepwise.0,
            "composed pixels differ from stepwise, {cfg:?}"
        );
        ensure!(
            composed.1 == stepwise.1,
            "composed annotations differ from stepwise, {cfg:?}"
        );
        ensure!(
            composed.1.frames[0].boxes.first().copied() == analytic,
            "composed box differs from chained transform_box, {cfg:?}"
        );
    }
    Ok(format!(
        "{checked} box/mask trials within {COMMUTATION_TOLERANCE_PX} px at {k}x rasterization (worst {worst:.3} px; skipped {dropped} dropped boxes, {slivers} sub-pixel slivers); flip involution and composition exact"
    ))
}

// ---------------------------------------------------------------- metrics

pub const METRIC_TOLERANCE: f64 = 1e-9;
pub const AP_CASES: usize = 3000;

fn det(image: &str, label: u32, b: (f64, f64, f64, f64), confidence: f64) -> Detection {
    Detection {
        image_id: image.into(),
        label,
        bbox: BBox::new(label, b.0, b.1, b.2, b.3),
        confidence,
    }
}

fn gt(entries: &[(&str, u32, (f64, f64, f64, f64))]) -> GroundTruth {
    let mut g: GroundTruth = HashMap::new();
    for (image, label, b) in entries {
        g.entry(image.to_string())
            .or_default()
            .push(BBox::new(*label, b.0, b.1, b.2, b.3));
    }
    g
}

/// The worked examples, each as `(name, got, want)`.
pub fn metric_examples() -> Vec<(&'static str, f64, f64)> {
    let b = |x0, y0, x1, y1| BBox::new(0, x0, y0, x1, y1);
    let one_gt = gt(&[("a", 0, (0.0, 0.0, 10.0, 10.0))]);
    let eleven = Interpolation::ElevenPoint;
    let two_dets = [
        det("a", 0, (0.0, 0.0, 10.0, 3.0), 0.9),
        det("a", 0, (0.0, 0.0, 10.0, 7.0), 0.8),
    ];
    let two_classes = gt(&[
        ("a", 0, (0.0, 0.0, 10.0, 10.0)),
        ("a", 1, (20.0, 20.0, 30.0, 30.0)),
    ]);
    let map = [
        det("a", 0, (0.0, 0.0, 10.0, 10.0), 0.9),
        det("a", 1, (0.0, 0.0, 5.0, 5.0), 0.9),
    ];
    let z = [1.0, 0.0, 0.0, 0.0];
    vec![
        (
            "iou (0,0,10,10) vs (5,0,15,10)",
            iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 15.0, 10.0)),
            1.0 / 3.0,
        ),
        (
            "iou identical",
            iou(&b(1.0, 2.0, 3.0, 4.0), &b(1.0, 2.0, 3.0, 4.0)),
            1.0,
        ),
        (
            "iou disjoint",
            iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)),
            0.0,
        ),
        (
            "AP one detection at IoU 0.6",
            average_precision(
                &[det("a", 0, (0.0, 0.0, 10.0, 6.0), 0.5)],
                &one_gt,
                0,
                0.5,
                eleven,
            )
            .unwrap(),
            1.0,
        ),
        (
            "AP no detections",
            average_precision(&[], &one_gt, 0, 0.5, eleven).unwrap(),
            0.0,
        ),
        (
            "eleven-point AP, IoU 0.3 then 0.7",
            average_precision(&two_dets, &one_gt, 0, 0.5, eleven).unwrap(),
            0.5,
        ),
        (
            "mAP of AP 1 and AP 0",
            mean_ap(&map, &two_classes, &[0, 1], 0.5, eleven).unwrap(),
            0.5,
        ),
        (
            "NSS fixation (0,0)",
            nss_values(&z, &[true, false, false, false]).unwrap(),
            1.5,
        ),
        (
            "NSS fixation (1,1)",
            nss_values(&z, &[false, false, false, true]).unwrap(),
            -0.5,
        ),
        (
            "CC identical",
            cc_values(&[0.1, 0.5, 0.2, 0.9], &[0.1, 0.5, 0.2, 0.9]).unwrap(),
            1.0,
        ),
        (
            "CC negation",
            cc_values(&[0.1, 0.5, 0.2, 0.9], &[-0.1, -0.5, -0.2, -0.9]).unwrap(),
            -1.0,
        ),
        (
            "CC shifted impulse",
            cc_values(&z, &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            -1.0 / 3.0,
        ),
        (
            "accuracy [0,1] vs [0,0]",
            accuracy(&[0, 1], &[0, 0]).unwrap(),
            0.5,
        ),
        (
            "accuracy 1 of 4 over 51 labels",
            accuracy(&[0, 10, 20, 50], &[0, 11, 21, 49]).unwrap(),
            0.25,
        ),
    ]
}

fn grid_box(r: &mut impl Rng) -> BBox {
    let x0 = r.random_range(0..6) as f64;
    let y0 = r.random_range(0..6) as f64;
    BBox::new(
        0,
        x0,
        y0,
        x0 + r.random_range(1..5) as f64,
        y0 + r.random_range(1..5) as f64,
    )
}

/// A random detection problem over two images, on a coarse grid so IoU and
/// confidence ties are common.
pub fn random_det_case(rng: &mut impl Rng) -> DetCase {
    let n_gt = rng.random_range(1..=3);
    let n_det = rng.random_range(0..=6);
    let gts = (0..n_gt)
        .map(|_| (rng.random_range(0..2), grid_box(rng)))
        .collect();
    let dets = (0..n_det)
        .map(|_| {
            let conf = rng.random_range(1..=5) as f64 / 5.0;
            (rng.random_range(0..2), grid_box(rng), conf)
        })
        .collect();
    DetCase { dets, gts }
}

/// Feeds a case to the library, padded with another class that must be ignored.
pub fn library_ap(case: &DetCase, thr: f64, interp: Interpolation) -> f64 {
    let mut dets: Vec<Detection> = case
        .dets
        .iter()
        .map(|(img, b, c)| Detection {
            image_id: format!("img{img}"),
            label: 0,
            bbox: *b,
            confidence: *c,
        })
        .collect();
    dets.push(det("img0", 9, (0.0, 0.0, 3.0, 3.0), 1.0));
    let mut gts: GroundTruth = HashMap::new();
    for (img, b) in &case.gts {
        gts.entry(format!("img{img}")).or_default().push(*b);
    }
    gts.entry("img1".into())
        .or_default()
        .push(BBox::new(9, 0.0, 0.0, 3.0, 3.0));
    average_precision(&dets, &gts, 0, thr, interp).unwrap()
}

pub fn metric_values() -> Outcome {
    let examples = metric_examples();
    for (name, got, want) in &examples {
        ensure!(
            (got - want).abs() <= METRIC_TOLERANCE,
            "{name}: got {got}, want {want}"
        );
    }
    let mut rng = stream_rng(5, 5);
    for i in 0..AP_CASES {
        let case = random_det_case(&mut rng);
        let thr = [0.3, 0.5, 0.7][i % 3];
        let pr = oracles::pr_by_prefix(&case, thr);
        for (interp, want) in [
            (Interpolation::ElevenPoint, oracles::ap_eleven(&pr)),
            (Interpolation::AllPoint, oracles::ap_all(&pr)),
        ] {
            let got = library_ap(&case, thr, interp);
            ensure!(
                (got - want).abs() <= METRIC_TOLERANCE,
                "case {i} ({interp}, threshold {thr}): got {got}, oracle {want}"
            );
        }
    }
    Ok(format!(
        "{} worked examples within {METRIC_TOLERANCE:e}; {AP_CASES} random AP cases (<=6 detections) match the exhaustive PR oracle",
        examples.len()
    ))
}

// ----------------------------------------------------------- pseudo-batches

pub const PSEUDO_BATCH_PARTITIONS: usize = 200;
pub const PSEUDO_BATCH_TOLERANCE: f64 = 1e-12;
pub const GRADIENT_DRAWS: usize = 200;
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-6;

/// Splits `samples` into consecutive mini-batches of random nonzero sizes.
pub fn random_partition(rng: &mut impl Rng, samples: &[Sample]) -> Vec<Vec<Sample>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let take = rng.random_range(1..=samples.len() - i);
        out.push(samples[i..i + take].to_vec());
        i += take;
    }
    out
}

/// A clip of random length and frame size, with an optional box.
fn random_clip_sample(rng: &mut impl Rng, outputs: usize) -> Sample {
    let (len, h, w) = (
        rng.random_range(1..=4),
        rng.random_range(4..=12),
        rng.random_range(4..=12),
    );
    let c = if rng.random_bool(0.8) { 3 } else { 1 };
    let clip = random_clip(rng, len, h, w, c);
    let mut annotations = AnnotationSet::empty(len);
    if rng.random_bool(0.5) {
        for f in &mut annotations.frames {
            *f = FrameAnnotations::with_boxes(vec![random_box(rng, h, w)]);
        }
    }
    Sample {
        input: Input::Clip { clip, annotations },
        target: Target::Class(rng.random_range(0..outputs as u32)),
    }
}

fn random_feature_sample(
    rng: &mut impl Rng,
    kind: ModelKind,
    inputs: usize,
    outputs: usize,
) -> Sample {
    let x = (0..inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
    let target = match kind {
        ModelKind::LinearRegressor if rng.random_bool(0.5) => {
            Target::Values((0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect())
        }
        _ => Target::Class(rng.random_range(0..outputs as u32)),
    };
    Sample::new(x, target)
}

fn random_model(rng: &mut impl Rng, kind: ModelKind, inputs: usize, outputs: usize) -> MicroModel {
    let mut m = MicroModel::zeros(kind, inputs, outputs);
    let p: Vec<f64> = (0..m.num_params())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    m.set_params(&p).unwrap();
    m
}

pub fn pseudo_batch_equivalence() -> Outcome {
    let mut rng = stream_rng(77, 3);
    let mut worst = 0.0f64;
    let mut variable_shape = 0;
    for t in 0..PSEUDO_BATCH_PARTITIONS {
        let kind = if t % 2 == 0 {
            ModelKind::LinearRegressor
        } else {
            ModelKind::LogisticClipClassifier
        };
        let clips = t % 4 >= 2;
        let outputs = rng.random_range(2..=4);
        let inputs = if clips {
            vippipe::engine::CLIP_FEATURE_DIM
        } else {
            rng.random_range(1..=6)
        };
        let n = rng.random_range(2..=10);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                if clips {
                    random_clip_sample(&mut rng, outputs)
                } else {
                    random_feature_sample(&mut rng, kind, inputs, outputs)
                }
            })
            .collect();
        variable_shape += usize::from(clips);
        let settings = StepSettings {
            lr: rng.random_range(0.01..1.0),
            momentum: rng.random_range(0.0..0.95),
            weight_decay: rng.random_range(0.0..0.01),
            // small enough that clipping kicks in on some draws
            grad_max_norm: rng.random_range(0.05..5.0),
        };
        let mut model = random_model(&mut rng, kind, inputs, outputs);
        let mut oracle_params = model.params();
        let mut oracle_buf = vec![0.0; model.num_params()];
        let mut state = SgdState::new(model.num_params());
        // two steps so the momentum buffer takes part
        for _ in 0..2 {
            let parts = random_partition(&mut rng, &samples);
            let mut reference = model.clone();
            reference.set_params(&oracle_params).unwrap();
            oracle_params = oracles::large_batch_step(
                &reference,
                &samples,
                &mut oracle_buf,
                settings.lr,
                settings.momentum,
                settings.weight_decay,
                settings.grad_max_norm,
            );
            let report = accumulate_step(&mut model, &parts, &mut state, &settings)
                .map_err(|e| e.to_string())?;
            ensure!(
                report.clipped_norm <= settings.grad_max_norm * (1.0 + 1e-12),
                "post-clip norm {} above {}",
                report.clipped_norm,
                settings.grad_max_norm
            );
            let err = oracles::rel_inf(&model.params(), &oracle_params)
                .max(oracles::rel_inf(&state.momentum, &oracle_buf));
            worst = worst.max(err);
            ensure!(
                err <= PSEUDO_BATCH_TOLERANCE,
                "partition {t} ({kind}, sizes {:?}): relative error {err:e}",
                parts.iter().map(Vec::len).collect::<Vec<_>>()
            );
        }
    }

    let mut worst_fd = 0.0f64;
    for d in 0..GRADIENT_DRAWS {
        let kind = if d % 2 == 0 {
            ModelKind::LinearRegressor
        } else {
            ModelKind::LogisticClipClassifier
        };
        let (inputs, outputs) = (rng.random_range(1..=7), rng.random_range(2..=5));
        let model = random_model(&mut rng, kind, inputs, outputs);
        let s = random_feature_sample(&mut rng, kind, inputs, outputs);
        let x = s.input.features();
        let (_, g) = model
            .loss_and_grad(&x, &s.target)
            .map_err(|e| e.to_string())?;
        let fd = oracles::finite_difference(&model, &x, &s.target, FD_STEP);
        let diff: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff / norm.max(f64::MIN_POSITIVE);
        worst_fd = worst_fd.max(rel);
        ensure!(
            rel <= FD_TOLERANCE,
            "draw {d} ({kind}): gradient relative error {rel:e}"
        );
    }
    Ok(format!(
        "{PSEUDO_BATCH_PARTITIONS} partitions ({variable_shape} with variable-shape clips), worst relative error {worst:.1e} <= {PSEUDO_BATCH_TOLERANCE:e}; {GRADIENT_DRAWS} finite-difference draws, worst {worst_fd:.1e} <= {FD_TOLERANCE:e}"
    ))
}

// ------------------------------------------------------------ determinism

pub const WORKER_COUNTS: [usize; 3] = [1, 2, 8];

/// Bytes of every artifact a run leaves behind that must not depend on scheduling.
pub fn run_artifacts(run_dir: &Path, epochs: usize) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![
        (
            LOG_FILE_NAME.to_string(),
            fixtures::read(&run_dir.join(LOG_FILE_NAME)),
        ),
        (
            SCALARS_FILE_NAME.to_string(),
            fixtures::read(&run_dir.join(SCALARS_FILE_NAME)),
        ),
    ];
    for e in 1..=epochs {
        out.push((
            format!("epoch_{e}.ckpt"),
            fixtures::read(&checkpoint_path(run_dir, e)),
        ));
    }
    out
}

pub fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = fixtures::small(dir.path());
    let base = |save: &str, extra: &[&str]| -> RunConfig {
        let yaml = fixtures::small_yaml(&data.path, &dir.path().join(save));
        fixtures::config(&yaml, extra)
    };

    let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
    let mut runs = 0;
    for workers in WORKER_COUNTS {
        for repeat in 0..2 {
            if repeat == 1 && workers != 1 {
                continue;
            }
            let w = format!("num_workers={workers}");
            let cfg = base(&format!("w{workers}_{repeat}"), &[&w]);
            let outcome = train(&cfg, &data.manifest).map_err(|e| e.to_string())?;
            let artifacts = run_artifacts(&outcome.run_dir, cfg.epoch);
            runs += 1;
            match &reference {
                None => reference = Some(artifacts),
                Some(r) => {
                    for ((name, a), (_, b)) in r.iter().zip(&artifacts) {
                        ensure!(
                            a == b,
                            "{name} differs with num_workers={workers} (repeat {repeat})"
                        );
                    }
                }
            }
        }
    }

    // ten epochs straight against five, then five more from the checkpoint
    let straight =
        train(&base("straight", &["epoch=10"]), &data.manifest).map_err(|e| e.to_string())?;
    let first = train(&base("first", &["epoch=5"]), &data.manifest).map_err(|e| e.to_string())?;
    let ckpt = first
        .last_checkpoint
        .clone()
        .ok_or("no checkpoint after five epochs")?;
    let resume_arg = format!("pretrained={}", ckpt.display());
    let resumed = train(&base("resumed", &["epoch=10", &resume_arg]), &data.manifest)
        .map_err(|e| e.to_string())?;
    ensure!(
        resumed.epoch == 10,
        "resume ended at epoch {}",
        resumed.epoch
    );
    ensure!(
        resumed.param_digest == straight.param_digest,
        "resumed digest {} != uninterrupted {}",
        resumed.param_digest,
        straight.param_digest
    );
    ensure!(
        fixtures::read(&checkpoint_path(&resumed.run_dir, 10))
            == fixtures::read(&checkpoint_path(&straight.run_dir, 10)),
        "final checkpoints differ after resume"
    );
    ensure!(
        resumed.epoch_losses[..] == straight.epoch_losses[5..],
        "epoch losses 6..10 differ after resume"
    );
    Ok(format!(
        "{runs} runs byte-identical across num_workers {WORKER_COUNTS:?}; 10 epochs == 5 + resume 5 (digest {}...)",
        &straight.param_digest[..12]
    ))
}

// ------------------------------------------------------------ end to end

pub const E2E_MIN_ACCURACY: f64 = 0.95;
pub const E2E_MAX_EPOCHS: usize = 30;
pub const E2E_BUDGET: Duration = Duration::from_secs(60);

pub struct E2eResult {
    pub accuracy: f64,
    pub clips: usize,
    pub epochs: usize,
    pub epoch_losses: Vec<f64>,
    pub elapsed: Duration,
}

pub fn run_e2e(dir: &Path) -> Result<E2eResult, String> {
    let data = fixtures::e2e(dir);
    let yaml = fixtures::e2e_yaml(&data.path, &dir.join("results"));
    let cfg = fixtures::config(&yaml, &[]);
    let start = Instant::now();
    let outcome = train(&cfg, &data.manifest).map_err(|e| e.to_string())?;
    let val = fixtures::config(&yaml, &["load_type=val"]);
    let report = evaluate_with(&val, &data.manifest, &outcome.model).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    // the saved checkpoint evaluates to the same number
    let ckpt = outcome.last_checkpoint.clone().ok_or("no checkpoint")?;
    let reloaded = evaluate(&val, &data.manifest, &PretrainedSpec::Checkpoint(ckpt))
        .map_err(|e| e.to_string())?;
    ensure!(
        reloaded.value == report.value,
        "checkpoint evaluates to {} vs {}",
        reloaded.value,
        report.value
    );
    Ok(E2eResult {
        accuracy: report.value,
        clips: report.clips,
        epochs: outcome.epoch,
        epoch_losses: outcome.epoch_losses,
        elapsed,
    })
}

pub fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let r = run_e2e(dir.path())?;
    ensure!(r.epochs <= E2E_MAX_EPOCHS, "trained {} epochs", r.epochs);
    ensure!(
        r.accuracy >= E2E_MIN_ACCURACY,
        "val accuracy {:.4} < {E2E_MIN_ACCURACY}",
        r.accuracy
    );
    ensure!(
        r.elapsed < E2E_BUDGET,
        "took {:.1?}, budget {E2E_BUDGET:?}",
        r.elapsed
    );
    Ok(format!(
        "val accuracy {:.4} on {} clips after {} epochs, {:.1?} (train + eval)",
        r.accuracy, r.clips, r.epochs, r.elapsed
    ))
}

// ------------------------------------------------------------------ codec

pub const CODEC_FRAMES: usize = 1000;

pub fn random_frame(rng: &mut impl Rng) -> Frame {
    let (h, w) = (rng.random_range(1..=24), rng.random_range(1..=24));
    let c = if rng.random_bool(0.5) { 3 } else { 1 };
    Frame::from_u8(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
}

pub fn codec() -> Outcome {
    let mut rng = stream_rng(1000, 0);
    for i in 0..CODEC_FRAMES {
        let f = random_frame(&mut rng);
        let bytes = encode_image(&f).map_err(|e| e.to_string())?;
        let back = decode_image(&bytes).map_err(|e| e.to_string())?;
        ensure!(back == f, "frame {i} ({}) changed in roundtrip", f.shape());
        ensure!(
            encode_image(&back).unwrap() == bytes,
            "frame {i} re-encodes differently"
        );
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut dumps = 0;
    for i in 0..50 {
        let (len, h, w, c) = (
            rng.random_range(1..=5),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
            1 + 2 * (i % 2),
        );
        let frames: Vec<Frame> = (0..len)
            .map(|_| {
                if i % 3 == 0 {
                    let v = (0..h * w * c)
                        .map(|_| rng.random_range(-300.0f32..300.0))
                        .collect();
                    Frame::from_f32(h, w, c, v).unwrap()
                } else {
                    Frame::from_u8(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
                }
            })
            .collect();
        let clip = Clip::new(frames).unwrap();
        let bytes = encode_vipc(&clip);
        let path = dir.path().join(format!("{i}.vipc"));
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        let reread = fixtures::read(&path);
        let back = decode_vipc(&reread).map_err(|e| e.to_string())?;
        ensure!(back == clip, "dump {i} decodes to a different clip");
        ensure!(
            encode_vipc(&back) == reread,
            "dump {i} is not bit-exact on reload"
        );
        dumps += 1;
    }
    Ok(format!(
        "{CODEC_FRAMES} random frames roundtrip exactly; {dumps} VIPC dumps reload bit-exact"
    ))
}

// ----------------------------------------------------------------- config

/// Two distinct, valid, non-default values for every known key.
pub fn key_values() -> Vec<(&'static str, &'static str, &'static str)> {
    vec![
        ("clip_length", "8", "4"),
        ("clip_offset", "1", "2"),
        ("clip_stride", "1", "-1"),
        ("clip_mode", "uniform", "contiguous"),
        ("crop_shape", "[10, 10]", "[20, 20]"),
        ("crop_type", "Random", "Center"),
        ("final_shape", "[8, 8]", "[16, 16]"),
        ("flip_probability", "0.5", "0.25"),
        ("num_clips", "2", "3"),
        ("random_offset", "1", "0"),
        ("resize_shape", "[40, 40]", "[50, 50]"),
        ("rotation_degrees", "10.0", "20.0"),
        ("subtract_mean", "[1.0, 2.0, 3.0]", "[4.0, 5.0, 6.0]"),
        ("acc_metric", "mAP", "NSS"),
        ("batch_size", "4", "5"),
        ("dataset", "first", "second"),
        ("debug", "1", "0"),
        ("epoch", "3", "4"),
        ("exp", "e1", "e2"),
        ("gamma", "0.5", "0.2"),
        ("grad_max_norm", "2.0", "3.0"),
        ("json_path", "a.json", "b.json"),
        ("labels", "5", "6"),
        ("load_type", "val", "test"),
        ("loss_type", "MSE", "M_XENTROPY"),
        ("lr", "0.5", "0.01"),
        ("milestones", "[1, 2]", "[3]"),
        ("model", "linear_regressor", "logistic_clip_classifier"),
        ("momentum", "0.5", "0.1"),
        ("num_workers", "3", "4"),
        ("opt", "adam", "sgd"),
        ("preprocess", "other", "default"),
        ("pretrained", "1", "0"),
        ("pseudo_batch_loop", "2", "3"),
        ("rerun", "0", "1"),
        ("save_dir", "/tmp/a", "/tmp/b"),
        ("seed", "1", "2"),
        ("weight_decay", "0.1", "0.2"),
    ]
}

fn key_value(cfg: &RunConfig, key: &str) -> Value {
    cfg.to_mapping().get(key).cloned().unwrap_or(Value::Null)
}

pub fn config_semantics() -> Outcome {
    let table = key_values();
    let mut listed: Vec<&str> = table.iter().map(|(k, _, _)| *k).collect();
    let mut known = known_keys();
    listed.sort_unstable();
    known.sort_unstable();
    ensure!(
        listed == known,
        "precedence table does not cover the known keys: {known:?}"
    );

    let defaults = RunConfig::default();
    for (key, file, cli) in &table {
        let file_text = format!("{key}: {file}\n");
        let from_file = fixtures::config(&file_text, &[]);
        let overridden = fixtures::config(&file_text, &[&format!("{key}={cli}")]);
        let cli_only = fixtures::config(&format!("{key}: {cli}\n"), &[]);
        let d = key_value(&defaults, key);
        let f = key_value(&from_file, key);
        let o = key_value(&overridden, key);
        ensure!(
            f != d,
            "{key}: file value {file} did not replace the default"
        );
        ensure!(
            o != f,
            "{key}: override {cli} did not replace file value {file}"
        );
        ensure!(
            o == key_value(&cli_only, key),
            "{key}: override parsed differently from the same file value"
        );
        // nothing else moved
        let mut rest_o = overridden.to_mapping();
        let mut rest_d = defaults.to_mapping();
        rest_o.remove(*key);
        rest_d.remove(*key);
        ensure!(rest_o == rest_d, "{key}: overriding it changed other keys");
    }

    // unknown keys ride along as extras, from the file and from overrides
    let cfg = fixtures::config(
        "my_custom: 5\nnested: {a: [1, 2]}\nlr: 0.5\n",
        &["from_cli=hello"],
    );
    ensure!(
        cfg.extra::<i64>("my_custom") == Some(5),
        "my_custom extra lost"
    );
    ensure!(
        cfg.extra::<String>("from_cli").as_deref() == Some("hello"),
        "override extra lost"
    );
    ensure!(
        cfg.extra::<Value>("nested") == serde_yaml::from_str("{a: [1, 2]}").ok(),
        "nested extra lost"
    );

    // the snapshot reloads to the same effective config
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("base.yaml");
    std::fs::write(
        &path,
        "lr: 0.0001\nmilestones: [10, 20]\nmy_custom: 5\ncrop_shape: [112, 112]\n",
    )
    .map_err(|e| e.to_string())?;
    let effective = load_config(&path, &["lr=0.01".into(), "crop_type=Center".into()])
        .map_err(|e| e.to_string())?;
    ensure!(
        effective.lr == 0.01,
        "override lr=0.01 gave {}",
        effective.lr
    );
    let snap = effective
        .write_snapshot(dir.path())
        .map_err(|e| e.to_string())?;
    ensure!(
        snap.file_name().unwrap() == SNAPSHOT_FILE_NAME,
        "snapshot named {}",
        snap.display()
    );
    let reloaded = load_config(&snap, &[]).map_err(|e| e.to_string())?;
    ensure!(
        reloaded == effective,
        "snapshot reloads to a different config"
    );
    Ok(format!(
        "override > file > default for all {} keys; extras roundtrip; snapshot reloads identically",
        table.len()
    ))
}
