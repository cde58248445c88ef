//! Checkpoint files.
//!
//! Layout: the magic `VIPCKPT\0`, a u64 LE header length, a JSON header, then
//! every tensor as little-endian f64 in header order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PretrainedSpec, RunConfig};
use super::model::{MicroModel, ModelKind, CLIP_FEATURE_DIM};
use super::optim::SgdState;
use super::EngineError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VIPCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Keys that change where or how long a run goes, not what it computes.
const PLUMBING_KEYS: &[&str] = &[
    "epoch",
    "exp",
    "load_type",
    "num_workers",
    "pretrained",
    "rerun",
    "save_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Param,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub model: ModelKind,
    pub inputs: usize,
    pub outputs: usize,
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Seed of the stream the next epoch draws from.
    pub rng_state: u64,
    pub config_digest: String,
    pub param_digest: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MicroModel,
    pub optimizer: Option<SgdState>,
    pub epoch: usize,
    pub step: u64,
    pub rng_state: u64,
    pub config_digest: String,
}

/// SHA-256 over the little-endian bytes of `params`, hex encoded.
pub fn param_digest(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Digest of the settings that determine a run's numerics.
pub fn config_digest(cfg: &RunConfig) -> String {
    let mut m = cfg.to_mapping();
    for k in PLUMBING_KEYS {
        m.remove(*k);
    }
    let text = serde_yaml::to_string(&m).expect("config serialization cannot fail");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut tensors: Vec<TensorEntry> = self
            .model
            .param_layout()
            .into_iter()
            .map(|(name, shape)| TensorEntry {
                name: name.into(),
                role: TensorRole::Param,
                shape,
            })
            .collect();
        if self.optimizer.is_some() {
            let momentum: Vec<TensorEntry> = tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    role: TensorRole::Momentum,
                    shape: t.shape.clone(),
                })
                .collect();
            tensors.extend(momentum);
        }
        CheckpointHeader {
            format: FORMAT_VERSION,
            model: self.model.kind,
            inputs: self.model.inputs,
            outputs: self.model.outputs,
            epoch: self.epoch,
            step: self.step,
            rng_state: self.rng_state,
            config_digest: self.config_digest.clone(),
            param_digest: param_digest(&self.model.params()),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serialization cannot fail");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut payload = self.model.params();
        if let Some(opt) = &self.optimizer {
            payload.extend_from_slice(&opt.momentum);
        }
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EngineError> {
        let bad = |m: &str| EngineError::InvalidCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])
            .map_err(|e| EngineError::InvalidCheckpoint(e.to_string()))?;
        if header.format != FORMAT_VERSION {
            return Err(EngineError::InvalidCheckpoint(format!(
                "unsupported format {}",
                header.format
            )));
        }
        let payload = &body[hlen..];
        if !payload.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let expected: usize = header.tensors.iter().map(TensorEntry::len).sum();
        if values.len() != expected {
            return Err(EngineError::InvalidCheckpoint(format!(
                "header lists {expected} values, payload has {}",
                values.len()
            )));
        }

        let mut model = MicroModel::zeros(header.model, header.inputs, header.outputs);
        let layout = model.param_layout();
        let mut params = Vec::new();
        let mut momentum = Vec::new();
        let mut at = 0;
        for t in &header.tensors {
            let slice = &values[at..at + t.len()];
            at += t.len();
            let want = layout.iter().find(|(n, _)| *n == t.name).map(|(_, s)| s);
            if want != Some(&t.shape) {
                return Err(EngineError::ShapeMismatch(format!(
                    "tensor `{}` has shape {:?}, model expects {:?}",
                    t.name, t.shape, want
                )));
            }
            match t.role {
                TensorRole::Param => params.extend_from_slice(slice),
                TensorRole::Momentum => momentum.extend_from_slice(slice),
            }
        }
        model.set_params(&params)?;
        let optimizer = if momentum.is_empty() {
            None
        } else if momentum.len() == params.len() {
            Some(SgdState { momentum })
        } else {
            return Err(EngineError::ShapeMismatch(
                "momentum buffers do not cover every parameter".into(),
            ));
        };
        if param_digest(&model.params()) != header.param_digest {
            return Err(bad("parameter digest does not match payload"));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            epoch: header.epoch,
            step: header.step,
            rng_state: header.rng_state,
            config_digest: header.config_digest,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        fs::write(path, self.to_bytes()).map_err(|source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let bytes = fs::read(path).map_err(|source| EngineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Model, optimizer state and progress to start a run from.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialized {
    pub model: MicroModel,
    pub optimizer: SgdState,
    /// Epochs already completed.
    pub epoch: usize,
    pub step: u64,
    pub warnings: Vec<String>,
}

/// Input and output widths a config asks of its model.
pub fn model_dims(cfg: &RunConfig) -> Result<(ModelKind, usize, usize), EngineError> {
    let kind: ModelKind = cfg.model.parse()?;
    if cfg.labels == 0 {
        return Err(EngineError::InvalidConfig(
            "labels must be at least 1".into(),
        ));
    }
    Ok((kind, CLIP_FEATURE_DIM, cfg.labels))
}

/// Directory holding canonical weights as `<model>.ckpt`; the `weights_dir`
/// extra, else `./weights`.
pub fn weights_dir(cfg: &RunConfig) -> PathBuf {
    cfg.extra::<String>("weights_dir")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("./weights"))
}

/// Builds the starting model for `spec`.
///
/// A checkpoint restores parameters, momentum and progress so training
/// continues where it stopped; with the `reset_optimizer` extra set only the
/// parameters are taken. A config digest mismatch is a warning unless the
/// `strict_digest` extra is set.
pub fn resolve_pretrained(
    spec: &PretrainedSpec,
    cfg: &RunConfig,
) -> Result<Initialized, EngineError> {
    let (kind, inputs, outputs) = model_dims(cfg)?;
    let check_shape = |m: &MicroModel| -> Result<(), EngineError> {
        if m.kind != kind || m.inputs != inputs || m.outputs != outputs {
            return Err(EngineError::ShapeMismatch(format!(
                "weights are {} [{}, {}], config wants {} [{}, {}]",
                m.kind, m.outputs, m.inputs, kind, outputs, inputs
            )));
        }
        Ok(())
    };
    match spec {
        PretrainedSpec::Fresh => {
            let model = MicroModel::fresh(kind, inputs, outputs, cfg.seed);
            let n = model.num_params();
            Ok(Initialized {
                model,
                optimizer: SgdState::new(n),
                epoch: 0,
                step: 0,
                warnings: Vec::new(),
            })
        }
        PretrainedSpec::Canonical => {
            let path = weights_dir(cfg).join(format!("{}.ckpt", kind.name()));
            if !path.is_file() {
                return Err(EngineError::MissingWeights(path));
            }
            let ckpt = Checkpoint::load(&path)?;
            check_shape(&ckpt.model)?;
            let n = ckpt.model.num_params();
            Ok(Initialized {
                model: ckpt.model,
                optimizer: SgdState::new(n),
                epoch: 0,
                step: 0,
                warnings: Vec::new(),
            })
        }
        PretrainedSpec::Checkpoint(path) => {
            if !path.is_file() {
                return Err(EngineError::MissingWeights(path.clone()));
            }
            let ckpt = Checkpoint::load(path)?;
            check_shape(&ckpt.model)?;
            let mut warnings = Vec::new();
            let digest = config_digest(cfg);
            if ckpt.config_digest != digest {
                if cfg.extra::<bool>("strict_digest").unwrap_or(false) {
                    return Err(EngineError::DigestMismatch {
                        expected: digest,
                        found: ckpt.config_digest,
                    });
                }
                warnings.push(format!(
                    "checkpoint {} was produced by a different config",
                    path.display()
                ));
            }
            let n = ckpt.model.num_params();
            if cfg.extra::<bool>("reset_optimizer").unwrap_or(false) {
                return Ok(Initialized {
                    model: ckpt.model,
                    optimizer: SgdState::new(n),
                    epoch: 0,
                    step: 0,
                    warnings,
                });
            }
            Ok(Initialized {
                optimizer: ckpt.optimizer.unwrap_or_else(|| SgdState::new(n)),
                model: ckpt.model,
                epoch: ckpt.epoch,
                step: ckpt.step,
                warnings,
            })
        }
    }
}
