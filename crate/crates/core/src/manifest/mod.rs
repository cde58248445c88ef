//! The JSON dataset manifest.
//!
//! One schema covers every annotation kind the pipeline understands: action
//! classes, per-frame boxes (optionally tracked), keypoints, saliency and
//! fixation maps, and word-to-box grounding labels. Keys the schema does not
//! know about are kept in `extras` so converters can carry their own data.
//!
//! ```json
//! {"videos": [{"path": "videos/vid_0000", "length": 30, "width": 64, "height": 48,
//!              "action_label": 2, "split": "train",
//!              "frames": [{"index": 0, "boxes": [{"label": 2, "xmin": 3.0, "ymin": 4.0,
//!                                                 "xmax": 20.0, "ymax": 21.0}]}]}]}
//! ```

mod synth;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{generate_synthetic_dataset, SynthSpec};
pub use validate::{validate_manifest, ValidationReport, Violation};

pub type Extras = BTreeMap<String, serde_json::Value>;

pub const MANIFEST_FILE_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] crate::frame_io::FrameError),
    #[error("invalid synthetic dataset request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<u32>,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(label: u32, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            label,
            track: None,
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    /// `xmin < xmax` and `ymin < ymax` (false for NaN coordinates).
    pub fn is_proper(&self) -> bool {
        self.xmin < self.xmax && self.ymin < self.ymax
    }
}

fn visible_default() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default = "visible_default")]
    pub visible: bool,
}

/// Ties a word of a grounding sentence to one of the frame's boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordLabel {
    pub word: u32,
    pub box_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<Keypoint>,
    /// P5 continuous saliency map, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_map: Option<String>,
    /// P5 binary fixation map; any value > 0 marks a fixation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_labels: Option<Vec<WordLabel>>,
    #[serde(flatten)]
    pub extras: Extras,
}

impl FrameAnnotation {
    pub fn new(index: usize) -> Self {
        Self {
            index,
            boxes: Vec::new(),
            keypoints: Vec::new(),
            saliency_map: None,
            fixations: None,
            word_labels: None,
            extras: Extras::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    /// Frame directory, relative to the manifest directory.
    pub path: String,
    pub length: usize,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_label: Option<u32>,
    #[serde(default)]
    pub frames: Vec<FrameAnnotation>,
    #[serde(default)]
    pub split: Split,
    #[serde(flatten)]
    pub extras: Extras,
}

impl VideoRecord {
    pub fn annotation(&self, index: usize) -> Option<&FrameAnnotation> {
        self.frames.iter().find(|f| f.index == index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<VideoRecord>,
    #[serde(flatten)]
    pub extras: Extras,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(videos: Vec<VideoRecord>) -> Self {
        Self {
            videos,
            extras: Extras::new(),
            root: PathBuf::new(),
        }
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn video_dir(&self, video: &VideoRecord) -> PathBuf {
        self.resolve(&video.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &VideoRecord)> {
        self.videos
            .iter()
            .enumerate()
            .filter(move |(_, v)| v.split == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }
}

/// Parses manifest JSON. Schema errors name the offending field, e.g. `videos[0].length`.
pub fn parse_manifest(json: &str, source: &Path) -> Result<DatasetManifest, ManifestError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ManifestError::Parse {
            path: source.to_path_buf(),
            message: e.to_string(),
        })?;
    serde_path_to_error::deserialize(value).map_err(|err| {
        let path = err.path().to_string();
        let message = err.inner().to_string();
        // serde reports a missing field at its parent; point at the field itself
        let field = match missing_field_name(&message) {
            Some(name) if path == "." => name.to_string(),
            Some(name) => format!("{path}.{name}"),
            None => path,
        };
        ManifestError::Schema { field, message }
    })
}

fn missing_field_name(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE_NAME)
    } else {
        path.to_path_buf()
    };
    let json = fs::read_to_string(&path).map_err(|source| ManifestError::Io {
        path: path.clone(),
        source,
    })?;
    let mut manifest = parse_manifest(&json, &path)?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn write_manifest(
    manifest: &DatasetManifest,
    path: impl AsRef<Path>,
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })
}
