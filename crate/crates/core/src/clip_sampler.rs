//! Clip extraction: maps a video length and a [`ClipConfig`] to lists of frame
//! indices.
//!
//! Contiguous clips start at `offset + i * (clip_length + clip_stride)`, so a
//! stride of 0 places clips back to back and a negative stride overlaps them.
//! With `num_clips = -1` every clip that fits is emitted and partial tails are
//! dropped; `num_clips = n > 0` spreads `n` starts evenly over the feasible
//! range. A video too short for one clip yields a single clip padded by
//! repeating its last frame. Uniform mode takes one clip of `clip_length`
//! indices spread evenly from the offset to the last frame.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClipError {
    #[error("invalid clip config: {0}")]
    InvalidConfig(String),
    #[error("infeasible clip config: {0}")]
    InfeasibleConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    #[default]
    Contiguous,
    Uniform,
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClipMode::Contiguous => "contiguous",
            ClipMode::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for ClipMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "contiguous" => Ok(ClipMode::Contiguous),
            "uniform" => Ok(ClipMode::Uniform),
            other => Err(format!("unknown clip mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Frames per clip, or -1 for the whole video.
    pub clip_length: i64,
    /// -1 = every clip that fits, 0 = one whole-video clip, n > 0 = exactly n clips.
    pub num_clips: i64,
    /// Gap between the end of one clip and the start of the next.
    pub clip_stride: i64,
    pub clip_offset: usize,
    pub random_offset: bool,
    pub mode: ClipMode,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            clip_length: 16,
            num_clips: -1,
            clip_stride: 0,
            clip_offset: 0,
            random_offset: false,
            mode: ClipMode::Contiguous,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), ClipError> {
        if self.clip_length == 0 || self.clip_length < -1 {
            return Err(ClipError::InvalidConfig(format!(
                "clip_length must be positive or -1, got {}",
                self.clip_length
            )));
        }
        if self.num_clips < -1 {
            return Err(ClipError::InvalidConfig(format!(
                "num_clips must be -1, 0 or positive, got {}",
                self.num_clips
            )));
        }
        if self.clip_length > 0 && self.clip_stride <= -self.clip_length {
            return Err(ClipError::InvalidConfig(format!(
                "clip_stride {} must exceed -clip_length ({})",
                self.clip_stride, -self.clip_length
            )));
        }
        Ok(())
    }
}

/// Frame indices for every clip extracted from one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPlan {
    pub clips: Vec<Vec<usize>>,
}

impl ClipPlan {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// `round(num / den)` with halves rounded up, for non-negative operands.
fn div_round(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

pub fn plan_clips(video_length: usize, cfg: &ClipConfig, seed: u64) -> Result<ClipPlan, ClipError> {
    cfg.validate()?;
    if video_length == 0 {
        return Err(ClipError::InfeasibleConfig("video has no frames".into()));
    }
    if cfg.mode == ClipMode::Uniform && cfg.num_clips > 1 {
        return Err(ClipError::InfeasibleConfig(format!(
            "uniform mode extracts one clip, {} requested",
            cfg.num_clips
        )));
    }
    let whole = || ClipPlan {
        clips: vec![(0..video_length).collect()],
    };
    if cfg.clip_length == -1 || cfg.num_clips == 0 {
        if !cfg.random_offset && cfg.clip_offset >= video_length {
            return Err(offset_error(cfg.clip_offset, video_length));
        }
        return Ok(whole());
    }
    let length = cfg.clip_length as usize;
    let offset = if cfg.random_offset {
        let max = video_length.saturating_sub(length);
        stream_rng(seed, 0).random_range(0..=max)
    } else if cfg.clip_offset >= video_length {
        return Err(offset_error(cfg.clip_offset, video_length));
    } else {
        cfg.clip_offset
    };

    if cfg.mode == ClipMode::Uniform {
        let span = video_length - 1 - offset;
        let clip = if length == 1 {
            vec![offset]
        } else {
            (0..length)
                .map(|k| offset + div_round(k * span, length - 1))
                .collect()
        };
        return Ok(ClipPlan { clips: vec![clip] });
    }

    let available = video_length - offset;
    if available < length {
        let clip = (0..length)
            .map(|k| (offset + k).min(video_length - 1))
            .collect();
        return Ok(ClipPlan { clips: vec![clip] });
    }
    let contiguous = |start: usize| (start..start + length).collect::<Vec<_>>();
    let clips = if cfg.num_clips == -1 {
        let step = (cfg.clip_length + cfg.clip_stride) as usize;
        (0..)
            .map(|i| offset + i * step)
            .take_while(|start| start + length <= video_length)
            .map(contiguous)
            .collect()
    } else {
        let n = cfg.num_clips as usize;
        let last = video_length - length;
        (0..n)
            .map(|k| {
                if n == 1 {
                    offset
                } else {
                    offset + div_round(k * (last - offset), n - 1)
                }
            })
            .map(contiguous)
            .collect()
    };
    Ok(ClipPlan { clips })
}

fn offset_error(offset: usize, video_length: usize) -> ClipError {
    ClipError::InfeasibleConfig(format!(
        "clip_offset {offset} is past the end of a {video_length}-frame video"
    ))
}
