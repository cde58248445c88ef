use std::collections::HashSet;

use serde::Serialize;

use super::{BBox, DatasetManifest};
use crate::frame_io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// All problems found in a manifest. An empty report means the manifest is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn contains(&self, message: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.message.starts_with(message))
    }
}

fn check_box(report: &mut ValidationReport, path: String, b: &BBox, width: usize, height: usize) {
    let finite = [b.xmin, b.ymin, b.xmax, b.ymax]
        .iter()
        .all(|v| v.is_finite());
    if !finite || !b.is_proper() {
        report.push(path, "degenerate box");
    } else if b.xmin < 0.0 || b.ymin < 0.0 || b.xmax > width as f64 || b.ymax > height as f64 {
        report.push(path, "box outside frame");
    }
}

/// Checks every structural guarantee of the format. With `check_files` set,
/// every frame `0..length` and every referenced map must exist on disk.
pub fn validate_manifest(m: &DatasetManifest, check_files: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    if m.videos.is_empty() {
        report.push("videos", "manifest has no videos");
    }
    let mut seen_paths = HashSet::new();
    for (vi, v) in m.videos.iter().enumerate() {
        let vp = format!("videos[{vi}]");
        if !seen_paths.insert(v.path.as_str()) {
            report.push(
                format!("{vp}.path"),
                format!("duplicate video path `{}`", v.path),
            );
        }
        if v.length == 0 {
            report.push(format!("{vp}.length"), "length must be at least 1");
        }
        if v.width == 0 || v.height == 0 {
            report.push(vp.clone(), "frame dimensions must be positive");
        }
        let mut seen_frames = HashSet::new();
        for (fi, fa) in v.frames.iter().enumerate() {
            let fp = format!("{vp}.frames[{fi}]");
            if fa.index >= v.length {
                report.push(
                    format!("{fp}.index"),
                    format!("index out of range ({} >= length {})", fa.index, v.length),
                );
            }
            if !seen_frames.insert(fa.index) {
                report.push(
                    format!("{fp}.index"),
                    format!("duplicate frame index {}", fa.index),
                );
            }
            for (bi, b) in fa.boxes.iter().enumerate() {
                check_box(
                    &mut report,
                    format!("{fp}.boxes[{bi}]"),
                    b,
                    v.width,
                    v.height,
                );
            }
            for (ki, k) in fa.keypoints.iter().enumerate() {
                let inside =
                    k.x >= 0.0 && k.y >= 0.0 && k.x <= v.width as f64 && k.y <= v.height as f64;
                if !inside {
                    report.push(format!("{fp}.keypoints[{ki}]"), "keypoint outside frame");
                }
            }
            for (wi, w) in fa.word_labels.iter().flatten().enumerate() {
                if w.box_index >= fa.boxes.len() {
                    report.push(
                        format!("{fp}.word_labels[{wi}]"),
                        format!("word label references missing box {}", w.box_index),
                    );
                }
            }
            if check_files {
                for (key, map) in [
                    ("saliency_map", &fa.saliency_map),
                    ("fixations", &fa.fixations),
                ] {
                    if let Some(rel) = map {
                        if !m.resolve(rel).is_file() {
                            report.push(format!("{fp}.{key}"), format!("missing map file `{rel}`"));
                        }
                    }
                }
            }
        }
        if check_files {
            let dir = m.video_dir(v);
            if !dir.is_dir() {
                report.push(
                    format!("{vp}.path"),
                    format!("missing frame directory `{}`", v.path),
                );
                continue;
            }
            for index in 0..v.length {
                if frame_io::frame_path(&dir, index).is_none() {
                    report.push(
                        format!("{vp}.path"),
                        format!("missing frame file for index {index}"),
                    );
                }
            }
        }
    }
    report
}
