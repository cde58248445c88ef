//! Desk-scale synthetic dataset: videos of a colored square drifting over a
//! noisy gray background. The square's hue encodes the action class, every
//! frame carries the square's box and center keypoint, and each frame has a
//! binary fixation map (square center) plus a Gaussian saliency map.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    write_manifest, BBox, DatasetManifest, FrameAnnotation, Keypoint, ManifestError, Split,
    VideoRecord, MANIFEST_FILE_NAME,
};
use crate::frame_io::{frame_file_name, write_image, Frame};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_videos: usize,
    /// The last `val_videos` videos are assigned to the `val` split.
    pub val_videos: usize,
    /// Inclusive range of video lengths in frames.
    pub length_range: (usize, usize),
    /// Frame (height, width).
    pub shape: (usize, usize),
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 6,
            val_videos: 0,
            length_range: (20, 40),
            shape: (48, 64),
            n_classes: 3,
            seed: 0,
        }
    }
}

/// Saturated color for class `c` of `n`, evenly spread around the hue circle.
pub fn class_color(c: usize, n: usize) -> [u8; 3] {
    let h = 6.0 * c as f64 / n.max(1) as f64;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let scale = |v: f64| (30.0 + 200.0 * v).round() as u8;
    [scale(r), scale(g), scale(b)]
}

/// Writes `manifest.json`, frame directories and maps under `out`, returning the manifest.
/// Output is a pure function of `spec`.
pub fn generate_synthetic_dataset(
    spec: &SynthSpec,
    out: &Path,
) -> Result<DatasetManifest, ManifestError> {
    let (min_len, max_len) = spec.length_range;
    let (height, width) = spec.shape;
    if spec.n_videos == 0 || spec.n_classes == 0 || min_len == 0 || height < 4 || width < 4 {
        return Err(ManifestError::InvalidRequest(
            "video count, class count, lengths and frame shape must be positive (frames at least 4x4)".into(),
        ));
    }
    if min_len > max_len {
        return Err(ManifestError::InvalidRequest(format!(
            "empty length range {min_len}..={max_len}"
        )));
    }
    if spec.val_videos > spec.n_videos {
        return Err(ManifestError::InvalidRequest(
            "more validation videos than videos".into(),
        ));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ManifestError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;

    let mut videos = Vec::with_capacity(spec.n_videos);
    for vi in 0..spec.n_videos {
        let mut rng = stream_rng(spec.seed, vi as u64);
        let class = vi % spec.n_classes;
        let length = rng.random_range(min_len..=max_len);
        let side = {
            let lo = (height.min(width) / 3).max(2);
            let hi = (height.min(width) / 2).max(lo);
            rng.random_range(lo..=hi) as f64
        };
        let mut x = rng.random_range(0.0..(width as f64 - side));
        let mut y = rng.random_range(0.0..(height as f64 - side));
        let mut vx = rng.random_range(-1.5..1.5);
        let mut vy = rng.random_range(-1.5..1.5);
        let base = class_color(class, spec.n_classes);
        let color: Vec<u8> = base
            .iter()
            .map(|&c| (c as i32 + rng.random_range(-10..=10)).clamp(0, 255) as u8)
            .collect();
        let gray: i32 = rng.random_range(100..=156);

        let rel = format!("videos/vid_{vi:04}");
        let dir = out.join(&rel);
        let maps = dir.join("maps");
        fs::create_dir_all(&maps).map_err(io(&maps))?;

        let mut frames = Vec::with_capacity(length);
        for fi in 0..length {
            let (x0, y0) = (x.round() as usize, y.round() as usize);
            let s = side as usize;
            let mut pixels = vec![0u8; height * width * 3];
            for py in 0..height {
                for px in 0..width {
                    let at = (py * width + px) * 3;
                    if (x0..x0 + s).contains(&px) && (y0..y0 + s).contains(&py) {
                        pixels[at..at + 3].copy_from_slice(&color);
                    } else {
                        for c in 0..3 {
                            pixels[at + c] =
                                (gray + rng.random_range(-12..=12)).clamp(0, 255) as u8;
                        }
                    }
                }
            }
            write_image(
                &dir.join(frame_file_name(fi, "ppm")),
                &Frame::from_u8(height, width, 3, pixels)?,
            )?;

            let b = BBox {
                label: class as u32,
                track: Some(0),
                xmin: x0 as f64,
                ymin: y0 as f64,
                xmax: (x0 + s) as f64,
                ymax: (y0 + s) as f64,
            };
            let (cx, cy) = b.center();
            let (fx, fy) = ((cx as usize).min(width - 1), (cy as usize).min(height - 1));
            let mut fixation = vec![0u8; height * width];
            fixation[fy * width + fx] = 255;
            let sigma = side / 3.0;
            let saliency = (0..height * width)
                .map(|i| {
                    let (px, py) = ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5);
                    let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                    (255.0 * (-d2 / (2.0 * sigma * sigma)).exp()).round() as u8
                })
                .collect();
            let fix_name = format!("fix_{fi:06}.pgm");
            let sal_name = format!("sal_{fi:06}.pgm");
            write_image(
                &maps.join(&fix_name),
                &Frame::from_u8(height, width, 1, fixation)?,
            )?;
            write_image(
                &maps.join(&sal_name),
                &Frame::from_u8(height, width, 1, saliency)?,
            )?;

            let mut fa = FrameAnnotation::new(fi);
            fa.boxes.push(b);
            fa.keypoints.push(Keypoint {
                x: cx,
                y: cy,
                visible: true,
            });
            fa.fixations = Some(format!("{rel}/maps/{fix_name}"));
            fa.saliency_map = Some(format!("{rel}/maps/{sal_name}"));
            frames.push(fa);

            // bounce off the borders
            if x + vx < 0.0 || x + vx > width as f64 - side {
                vx = -vx;
            }
            if y + vy < 0.0 || y + vy > height as f64 - side {
                vy = -vy;
            }
            x = (x + vx).clamp(0.0, width as f64 - side);
            y = (y + vy).clamp(0.0, height as f64 - side);
        }

        videos.push(VideoRecord {
            path: rel,
            length,
            width,
            height,
            action_label: Some(class as u32),
            frames,
            split: if vi >= spec.n_videos - spec.val_videos {
                Split::Val
            } else {
                Split::Train
            },
            extras: Default::default(),
        });
    }

    let mut manifest = DatasetManifest::new(videos);
    manifest.root = out.to_path_buf();
    write_manifest(&manifest, out.join(MANIFEST_FILE_NAME))?;
    Ok(manifest)
}
