//! Config-driven training and evaluation over built-in micro-models.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod loader;
pub mod model;
pub mod optim;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{config_digest, param_digest, resolve_pretrained, Checkpoint, Initialized};
pub use config::{load_config, ConfigError, PretrainedSpec, RunConfig};
pub use dataset::{ClipDataset, ClipItem, LoadedClip};
pub use eval::{evaluate, evaluate_with, ClipPredictor, MetricReport};
pub use model::{clip_features, Input, MicroModel, ModelKind, Sample, Target, CLIP_FEATURE_DIM};
pub use optim::{
    accumulate_gradient, accumulate_step, schedule_lr, SgdState, StepReport, StepSettings,
};
pub use train::{train, TrainOutcome};

use crate::clip_sampler::ClipError;
use crate::frame_io::FrameError;
use crate::manifest::ManifestError;
use crate::metrics::MetricError;
use crate::transforms::TransformError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("metric {metric} is not produced by model {model}")]
    UnsupportedMetric { metric: String, model: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("no clips in the {0} split")]
    EmptyDataset(String),
    #[error("item {index} out of range for dataset of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("video {0} has no action_label")]
    MissingLabel(usize),
    #[error("manifest failed validation: {0}")]
    InvalidManifest(String),
    #[error("weights file not found: {}", .0.display())]
    MissingWeights(PathBuf),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config digest mismatch: expected {expected}, checkpoint has {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("{} already holds a run; set rerun: 1 or resume from a checkpoint", .0.display())]
    RunExists(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Rejects settings the engine has no implementation for.
pub fn check_supported(cfg: &RunConfig) -> Result<ModelKind, EngineError> {
    let kind: ModelKind = cfg.model.parse()?;
    if !kind.accepts_loss(&cfg.loss_type) {
        return Err(EngineError::InvalidConfig(format!(
            "model {kind} trains with {}, not {}",
            kind.loss_name(),
            cfg.loss_type
        )));
    }
    if !cfg.opt.eq_ignore_ascii_case("sgd") {
        return Err(EngineError::InvalidConfig(format!(
            "unsupported optimizer `{}`",
            cfg.opt
        )));
    }
    if cfg.preprocess != "default" {
        return Err(EngineError::InvalidConfig(format!(
            "unknown preprocess `{}`",
            cfg.preprocess
        )));
    }
    Ok(kind)
}
