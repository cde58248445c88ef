//! Experiment configuration.
//!
//! A run is described by one flat YAML mapping. Known keys are typed and
//! validated; any other key is kept verbatim in [`RunConfig::extras`] and can
//! be read anywhere downstream. Precedence, lowest first: built-in default,
//! `VIPPIPE_SEED` (seed only), the file, then `key=value` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::clip_sampler::{ClipConfig, ClipMode};
use crate::manifest::Split;
use crate::transforms::{CropType, TransformConfig};

pub const SEED_ENV: &str = "VIPPIPE_SEED";
pub const SNAPSHOT_FILE_NAME: &str = "config.snapshot.yaml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse {}: {message}", source_path.display())]
    Parse {
        source_path: PathBuf,
        message: String,
    },
    #[error("wrong type for `{key}`: {message}")]
    Type { key: String, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("malformed override `{0}` (expected key=value)")]
    MalformedOverride(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How model weights are initialized: `0`, `1`, or a checkpoint path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PretrainedSpec {
    /// Seeded random initialization.
    #[default]
    Fresh,
    /// Canonical weights from the model registry.
    Canonical,
    Checkpoint(PathBuf),
}

impl Serialize for PretrainedSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PretrainedSpec::Fresh => s.serialize_u8(0),
            PretrainedSpec::Canonical => s.serialize_u8(1),
            PretrainedSpec::Checkpoint(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }
}

impl<'de> Deserialize<'de> for PretrainedSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) if n.as_u64() == Some(0) => Ok(PretrainedSpec::Fresh),
            Value::Number(n) if n.as_u64() == Some(1) => Ok(PretrainedSpec::Canonical),
            Value::Bool(b) => Ok(if b {
                PretrainedSpec::Canonical
            } else {
                PretrainedSpec::Fresh
            }),
            Value::String(s) if s == "0" => Ok(PretrainedSpec::Fresh),
            Value::String(s) if s == "1" => Ok(PretrainedSpec::Canonical),
            Value::String(s) if !s.is_empty() => Ok(PretrainedSpec::Checkpoint(PathBuf::from(s))),
            other => Err(de::Error::custom(format!(
                "expected 0, 1 or a checkpoint path, found {other:?}"
            ))),
        }
    }
}

impl std::str::FromStr for PretrainedSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_yaml::from_str(s).map_err(|e| ConfigError::Type {
            key: "pretrained".into(),
            message: e.to_string(),
        })
    }
}

/// 0/1 integers or booleans.
fn flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match Value::deserialize(d)? {
        Value::Bool(b) => Ok(b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        other => Err(de::Error::custom(format!(
            "expected 0/1 or a boolean, found {other:?}"
        ))),
    }
}

fn serialize_flag<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(*v as u8)
}

/// `[h, w]`, or null / `''` for unset.
fn optional_shape<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[usize; 2]>, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(None),
        Value::String(s) if s.is_empty() => Ok(None),
        other => <[usize; 2]>::deserialize(other)
            .map(Some)
            .map_err(|e| de::Error::custom(format!("expected [height, width]: {e}"))),
    }
}

/// `''` (disabled), a single number, or one number per channel.
fn mean_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(Vec::new()),
        Value::String(s) if s.is_empty() => Ok(Vec::new()),
        Value::Number(n) => n
            .as_f64()
            .map(|v| vec![v as f32])
            .ok_or_else(|| de::Error::custom("mean must be finite")),
        other => Vec::<f32>::deserialize(other)
            .map_err(|e| de::Error::custom(format!("expected '' or a list of means: {e}"))),
    }
}

fn serialize_mean<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
    if v.is_empty() {
        s.serialize_str("")
    } else {
        v.serialize(s)
    }
}

fn crop_type<'de, D: Deserializer<'de>>(d: D) -> Result<CropType, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(CropType::None),
        Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "random" => Ok(CropType::Random),
            "center" | "centre" => Ok(CropType::Center),
            "" | "none" => Ok(CropType::None),
            _ => Err(de::Error::custom(format!("unknown crop_type `{s}`"))),
        },
        other => Err(de::Error::custom(format!(
            "expected Random, Center or None, found {other:?}"
        ))),
    }
}

fn optional_f64<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    match Value::deserialize(d)? {
        Value::Null => Ok(None),
        Value::String(s) if s.is_empty() => Ok(None),
        other => f64::deserialize(other).map(Some).map_err(de::Error::custom),
    }
}

fn split_name<'de, D: Deserializer<'de>>(d: D) -> Result<Split, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(de::Error::custom)
}

fn clip_mode<'de, D: Deserializer<'de>>(d: D) -> Result<ClipMode, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(de::Error::custom)
}

/// Every key a config file may set, plus the open `extras` bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // preprocessing
    pub clip_length: i64,
    pub clip_offset: usize,
    pub clip_stride: i64,
    #[serde(deserialize_with = "clip_mode")]
    pub clip_mode: ClipMode,
    #[serde(deserialize_with = "optional_shape")]
    pub crop_shape: Option<[usize; 2]>,
    #[serde(deserialize_with = "crop_type")]
    pub crop_type: CropType,
    #[serde(deserialize_with = "optional_shape")]
    pub final_shape: Option<[usize; 2]>,
    pub flip_probability: f64,
    pub num_clips: i64,
    #[serde(deserialize_with = "flag", serialize_with = "serialize_flag")]
    pub random_offset: bool,
    #[serde(deserialize_with = "optional_shape")]
    pub resize_shape: Option<[usize; 2]>,
    #[serde(deserialize_with = "optional_f64")]
    pub rotation_degrees: Option<f64>,
    #[serde(deserialize_with = "mean_list", serialize_with = "serialize_mean")]
    pub subtract_mean: Vec<f32>,

    // experimental setup
    pub acc_metric: String,
    pub batch_size: usize,
    pub dataset: String,
    #[serde(deserialize_with = "flag", serialize_with = "serialize_flag")]
    pub debug: bool,
    pub epoch: usize,
    pub exp: String,
    pub gamma: f64,
    pub grad_max_norm: f64,
    pub json_path: PathBuf,
    pub labels: usize,
    #[serde(deserialize_with = "split_name")]
    pub load_type: Split,
    pub loss_type: String,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub model: String,
    pub momentum: f64,
    pub num_workers: usize,
    pub opt: String,
    pub preprocess: String,
    pub pretrained: PretrainedSpec,
    pub pseudo_batch_loop: usize,
    #[serde(deserialize_with = "flag", serialize_with = "serialize_flag")]
    pub rerun: bool,
    pub save_dir: PathBuf,
    pub seed: u64,
    pub weight_decay: f64,

    #[serde(skip)]
    pub extras: BTreeMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            clip_length: 16,
            clip_offset: 0,
            clip_stride: 0,
            clip_mode: ClipMode::Contiguous,
            crop_shape: None,
            crop_type: CropType::None,
            final_shape: None,
            flip_probability: 0.0,
            num_clips: -1,
            random_offset: false,
            resize_shape: None,
            rotation_degrees: None,
            subtract_mean: Vec::new(),
            acc_metric: "Accuracy".into(),
            batch_size: 3,
            dataset: "synthetic".into(),
            debug: false,
            epoch: 30,
            exp: "exp".into(),
            gamma: 0.1,
            grad_max_norm: 10.0,
            json_path: PathBuf::new(),
            labels: 3,
            load_type: Split::Train,
            loss_type: "M_XENTROPY".into(),
            lr: 1e-4,
            milestones: vec![10, 20],
            model: "logistic_clip_classifier".into(),
            momentum: 0.9,
            num_workers: 2,
            opt: "sgd".into(),
            preprocess: "default".into(),
            pretrained: PretrainedSpec::Fresh,
            pseudo_batch_loop: 1,
            rerun: true,
            save_dir: PathBuf::from("./results"),
            seed: 999,
            weight_decay: 5e-4,
            extras: BTreeMap::new(),
        }
    }
}

/// Known keys, in file order.
pub fn known_keys() -> Vec<String> {
    match serde_yaml::to_value(RunConfig::default()) {
        Ok(Value::Mapping(m)) => m
            .keys()
            .filter_map(|k| k.as_str().map(str::to_owned))
            .collect(),
        _ => unreachable!("RunConfig serializes to a mapping"),
    }
}

fn valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

/// Splits `key=value`, parsing the value as a YAML scalar or flow collection.
pub fn parse_override(raw: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::MalformedOverride(raw.to_string()))?;
    let key = key.trim().trim_start_matches("--");
    if !valid_key(key) {
        return Err(ConfigError::MalformedOverride(raw.to_string()));
    }
    let value = if value.trim().is_empty() {
        Value::String(String::new())
    } else {
        serde_yaml::from_str(value).map_err(|_| ConfigError::MalformedOverride(raw.to_string()))?
    };
    Ok((key.replace('-', "_"), value))
}

impl RunConfig {
    /// Resolves a config from YAML text plus `key=value` overrides.
    pub fn from_yaml_str(
        text: &str,
        overrides: &[String],
        source: &Path,
    ) -> Result<Self, ConfigError> {
        let parsed: Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
            source_path: source.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut mapping = match parsed {
            Value::Mapping(m) => m,
            Value::Null => Mapping::new(),
            _ => {
                return Err(ConfigError::Parse {
                    source_path: source.to_path_buf(),
                    message: "top level must be a mapping".into(),
                })
            }
        };
        if !mapping.contains_key("seed") {
            if let Ok(seed) = std::env::var(SEED_ENV) {
                let seed: u64 = seed.trim().parse().map_err(|_| ConfigError::Invalid {
                    key: SEED_ENV.into(),
                    message: format!("`{seed}` is not an unsigned integer"),
                })?;
                mapping.insert("seed".into(), seed.into());
            }
        }
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            mapping.insert(Value::String(key), value);
        }
        Self::from_mapping(mapping)
    }

    fn from_mapping(mapping: Mapping) -> Result<Self, ConfigError> {
        let known = known_keys();
        let mut typed = Mapping::new();
        let mut extras = BTreeMap::new();
        for (k, v) in mapping {
            let key = match k {
                Value::String(s) => s,
                other => {
                    return Err(ConfigError::Type {
                        key: format!("{other:?}"),
                        message: "config keys must be strings".into(),
                    })
                }
            };
            if known.contains(&key) {
                typed.insert(Value::String(key), v);
            } else {
                extras.insert(key, v);
            }
        }
        let mut cfg: RunConfig =
            serde_path_to_error::deserialize(Value::Mapping(typed)).map_err(|e| {
                ConfigError::Type {
                    key: e.path().to_string(),
                    message: e.inner().to_string(),
                }
            })?;
        cfg.extras = extras;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid {
            key: key.into(),
            message,
        };
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1".into()));
        }
        if self.pseudo_batch_loop == 0 {
            return Err(invalid("pseudo_batch_loop", "must be at least 1".into()));
        }
        if self.epoch == 0 {
            return Err(invalid("epoch", "must be at least 1".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                "milestones",
                format!("{:?} is not strictly increasing", self.milestones),
            ));
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid("gamma", "must be non-negative".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(invalid("lr", "must be non-negative".into()));
        }
        if !(self.grad_max_norm > 0.0) {
            return Err(invalid("grad_max_norm", "must be positive".into()));
        }
        self.clip_config()
            .validate()
            .map_err(|e| invalid("clip_length", e.to_string()))?;
        self.transform_config()
            .validate()
            .map_err(|e| invalid("crop_shape", e.to_string()))?;
        Ok(())
    }

    pub fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            clip_length: self.clip_length,
            num_clips: self.num_clips,
            clip_stride: self.clip_stride,
            clip_offset: self.clip_offset,
            random_offset: self.random_offset,
            mode: self.clip_mode,
        }
    }

    pub fn transform_config(&self) -> TransformConfig {
        TransformConfig {
            resize_shape: self.resize_shape,
            crop_shape: self.crop_shape,
            crop_type: self.crop_type,
            flip_probability: self.flip_probability,
            rotation_degrees: self.rotation_degrees,
            subtract_mean: self.subtract_mean.clone(),
            final_shape: self.final_shape,
        }
    }

    /// Known keys followed by extras, as a YAML mapping.
    pub fn to_mapping(&self) -> Mapping {
        let mut m = match serde_yaml::to_value(self) {
            Ok(Value::Mapping(m)) => m,
            _ => unreachable!("RunConfig serializes to a mapping"),
        };
        for (k, v) in &self.extras {
            m.insert(Value::String(k.clone()), v.clone());
        }
        m
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.to_mapping()).expect("config serialization cannot fail")
    }

    /// Reads an extras entry as `T`.
    pub fn extra<T: serde::de::DeserializeOwned>(&self, key: &str) -> Option<T> {
        self.extras
            .get(key)
            .and_then(|v| serde_yaml::from_value(v.clone()).ok())
    }

    /// Manifest location: `json_path` itself, or `json_path/manifest.json` for a directory.
    pub fn manifest_path(&self) -> PathBuf {
        if self.json_path.is_dir() {
            self.json_path.join(crate::manifest::MANIFEST_FILE_NAME)
        } else {
            self.json_path.clone()
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(SNAPSHOT_FILE_NAME);
        fs::write(&path, self.to_yaml()).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}

/// Loads a YAML config file and applies `key=value` overrides on top.
pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_yaml_str(&text, overrides, path)
}
