//! Evaluation over the split named by `load_type`.

use std::path::Path;

use serde::Serialize;

use super::checkpoint::resolve_pretrained;
use super::config::{PretrainedSpec, RunConfig};
use super::dataset::{ClipDataset, LoadedClip};
use super::loader::ordered_collect;
use super::model::{clip_features, MicroModel};
use super::{check_supported, EngineError};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{accuracy, MetricKind};

/// Maps a loaded clip to a class id.
pub trait ClipPredictor: Sync {
    fn predict(&self, clip: &LoadedClip) -> Result<u32, EngineError>;
}

impl ClipPredictor for MicroModel {
    fn predict(&self, clip: &LoadedClip) -> Result<u32, EngineError> {
        self.predict_class(&clip_features(&clip.clip, &clip.annotations))
    }
}

/// Adapts a closure into a [`ClipPredictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&LoadedClip) -> u32 + Sync> ClipPredictor for FnPredictor<F> {
    fn predict(&self, clip: &LoadedClip) -> Result<u32, EngineError> {
        Ok((self.0)(clip))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub split: Split,
    pub clips: usize,
    pub correct: usize,
    pub model: String,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), EngineError> {
        std::fs::write(path, self.to_json()).map_err(|source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Resolves `cfg.acc_metric`, rejecting metrics a class-output model cannot feed.
pub fn check_metric(cfg: &RunConfig) -> Result<MetricKind, EngineError> {
    let metric = MetricKind::parse(&cfg.acc_metric)?;
    if metric != MetricKind::Accuracy {
        return Err(EngineError::UnsupportedMetric {
            metric: metric.name().into(),
            model: cfg.model.clone(),
        });
    }
    Ok(metric)
}

/// Scores `predictor` on the `load_type` split with deterministic transforms.
pub fn evaluate_with(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    predictor: &dyn ClipPredictor,
) -> Result<MetricReport, EngineError> {
    let metric = check_metric(cfg)?;
    let ds = ClipDataset::new(
        manifest.clone(),
        cfg.load_type,
        &cfg.clip_config(),
        cfg.transform_config().for_evaluation(),
        cfg.seed,
    )?;
    if ds.is_empty() {
        return Err(EngineError::EmptyDataset(cfg.load_type.to_string()));
    }
    let pairs: Vec<(u32, u32)> = ordered_collect(ds.len(), cfg.num_workers, |i| {
        let loaded = ds.load(i)?;
        let label = loaded
            .item
            .label
            .ok_or(EngineError::MissingLabel(loaded.item.video))?;
        Ok::<_, EngineError>((predictor.predict(&loaded)?, label))
    })?;
    let (pred, labels): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
    let value = accuracy(&pred, &labels)?;
    Ok(MetricReport {
        metric: metric.name().into(),
        value,
        split: cfg.load_type,
        clips: pred.len(),
        correct: pred.iter().zip(&labels).filter(|(p, l)| p == l).count(),
        model: cfg.model.clone(),
    })
}

/// Evaluates the config's model initialized from `weights`.
pub fn evaluate(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    weights: &PretrainedSpec,
) -> Result<MetricReport, EngineError> {
    check_metric(cfg)?;
    check_supported(cfg)?;
    let init = resolve_pretrained(weights, cfg)?;
    for w in &init.warnings {
        log::warn!("{w}");
    }
    evaluate_with(cfg, manifest, &init.model)
}
