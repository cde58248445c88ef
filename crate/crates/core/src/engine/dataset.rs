//! Clip-level view of a manifest split.
//!
//! Item `i` is a pure function of `(manifest, configs, seed, i)`: the clip
//! plan of each video is seeded by `derive_seed(seed, video)` and the
//! transform parameters by `(seed, i)`. That is what lets any number of
//! workers load items out of order without changing results.

use serde::Serialize;

use super::config::RunConfig;
use super::EngineError;
use crate::clip_sampler::{plan_clips, ClipConfig};
use crate::frame_io::{read_clip, read_image, Clip};
use crate::manifest::{DatasetManifest, Split};
use crate::rng::derive_seed;
use crate::transforms::{
    apply_clip, sample_params, AnnotationSet, FrameAnnotations, SampledParams, TransformConfig,
};

/// One planned clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClipItem {
    /// Index into `manifest.videos`.
    pub video: usize,
    /// Clip number within the video.
    pub clip: usize,
    pub indices: Vec<usize>,
    pub label: Option<u32>,
}

/// A loaded and transformed item.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub item: ClipItem,
    pub clip: Clip,
    pub annotations: AnnotationSet,
    pub params: SampledParams,
}

/// JSON sidecar describing a loaded item.
#[derive(Debug, Serialize)]
struct ItemRecord<'a> {
    video: usize,
    path: &'a str,
    clip: usize,
    indices: &'a [usize],
    label: Option<u32>,
    params: &'a SampledParams,
    frames: &'a [FrameAnnotations],
}

impl LoadedClip {
    /// Item metadata, sampled parameters and transformed annotations as JSON.
    pub fn annotation_json(&self, manifest: &DatasetManifest) -> String {
        let record = ItemRecord {
            video: self.item.video,
            path: &manifest.videos[self.item.video].path,
            clip: self.item.clip,
            indices: &self.item.indices,
            label: self.item.label,
            params: &self.params,
            frames: &self.annotations.frames,
        };
        serde_json::to_string_pretty(&record).expect("annotations serialize")
    }
}

#[derive(Debug, Clone)]
pub struct ClipDataset {
    manifest: DatasetManifest,
    items: Vec<ClipItem>,
    transform: TransformConfig,
    seed: u64,
    load_maps: bool,
}

impl ClipDataset {
    pub fn new(
        manifest: DatasetManifest,
        split: Split,
        clip_cfg: &ClipConfig,
        transform: TransformConfig,
        seed: u64,
    ) -> Result<Self, EngineError> {
        transform.validate()?;
        let mut items = Vec::new();
        for (vi, video) in manifest.split(split) {
            let plan = plan_clips(video.length, clip_cfg, derive_seed(seed, vi as u64))?;
            for (ci, indices) in plan.clips.into_iter().enumerate() {
                items.push(ClipItem {
                    video: vi,
                    clip: ci,
                    indices,
                    label: video.action_label,
                });
            }
        }
        Ok(Self {
            manifest,
            items,
            transform,
            seed,
            load_maps: false,
        })
    }

    /// The dataset a config describes: split `load_type`, its clip and
    /// transform settings, and its seed. `dump` and the C API both use this.
    pub fn from_config(manifest: DatasetManifest, cfg: &RunConfig) -> Result<Self, EngineError> {
        Self::new(
            manifest,
            cfg.load_type,
            &cfg.clip_config(),
            cfg.transform_config(),
            cfg.seed,
        )
    }

    /// Also load saliency and fixation maps named in the annotations.
    pub fn with_maps(mut self, load_maps: bool) -> Self {
        self.load_maps = load_maps;
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ClipItem] {
        &self.items
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn raw_annotations(&self, item: &ClipItem) -> Result<AnnotationSet, EngineError> {
        let video = &self.manifest.videos[item.video];
        let mut frames = Vec::with_capacity(item.indices.len());
        for &index in &item.indices {
            let mut fa = FrameAnnotations::default();
            if let Some(a) = video.annotation(index) {
                fa = FrameAnnotations::with_boxes(a.boxes.clone());
                fa.keypoints = a.keypoints.clone();
                fa.word_labels = a.word_labels.clone().unwrap_or_default();
                if self.load_maps {
                    if let Some(p) = &a.saliency_map {
                        fa.saliency = Some(read_image(&self.manifest.resolve(p))?);
                    }
                    if let Some(p) = &a.fixations {
                        fa.fixations = Some(read_image(&self.manifest.resolve(p))?);
                    }
                }
            }
            frames.push(fa);
        }
        Ok(AnnotationSet { frames })
    }

    /// Loads item `i` untransformed.
    pub fn load_raw(&self, i: usize) -> Result<(Clip, AnnotationSet), EngineError> {
        let item = self.item(i)?;
        let video = &self.manifest.videos[item.video];
        let clip = read_clip(&self.manifest.video_dir(video), &item.indices)?;
        Ok((clip, self.raw_annotations(item)?))
    }

    pub fn item(&self, i: usize) -> Result<&ClipItem, EngineError> {
        self.items.get(i).ok_or(EngineError::IndexOutOfRange {
            index: i,
            len: self.items.len(),
        })
    }

    /// Loads and transforms item `i`.
    pub fn load(&self, i: usize) -> Result<LoadedClip, EngineError> {
        let (clip, annotations) = self.load_raw(i)?;
        let shape = clip.shape();
        let params = sample_params(
            &self.transform,
            [shape.height, shape.width],
            self.seed,
            i as u64,
        )?;
        let (clip, annotations) = apply_clip(&clip, &annotations, &self.transform, &params)?;
        Ok(LoadedClip {
            item: self.items[i].clone(),
            clip,
            annotations,
            params,
        })
    }
}
