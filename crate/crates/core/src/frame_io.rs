//! Frame and clip containers plus the on-disk codecs.
//!
//! Frames are stored as binary netpbm files: `P6` for RGB video frames and
//! `P5` for single-channel saliency/fixation maps, always with maxval 255.
//! A video is a directory of such files named by zero-padded frame index.
//! Clips can be dumped to the `VIPC` container used by the CLI and the C ABI.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("missing frame {index} in {}", dir.display())]
    MissingFrame { index: usize, dir: PathBuf },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = FrameError> = std::result::Result<T, E>;

/// Height, width and channel count of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Sample storage. Frames start as 8-bit and become float after mean subtraction.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f32 {
        match self {
            Samples::U8(v) => v[i] as f32,
            Samples::F32(v) => v[i],
        }
    }
}

/// A single image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    shape: Shape,
    samples: Samples,
}

impl Frame {
    pub fn new(shape: Shape, samples: Samples) -> Result<Self> {
        if shape.channels != 1 && shape.channels != 3 {
            return Err(FrameError::InvalidFrame(format!(
                "channel count {} (expected 1 or 3)",
                shape.channels
            )));
        }
        if samples.len() != shape.len() {
            return Err(FrameError::InvalidFrame(format!(
                "{} samples for shape {}",
                samples.len(),
                shape
            )));
        }
        Ok(Self { shape, samples })
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(Shape::new(height, width, channels), Samples::U8(data))
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Shape::new(height, width, channels), Samples::F32(data))
    }

    /// Builds a frame without checking the channel invariant. Used by the
    /// encoder tests and by callers that need to represent foreign data.
    pub fn from_raw_parts(shape: Shape, samples: Samples) -> Self {
        Self { shape, samples }
    }

    pub fn zeros_like(&self) -> Self {
        let samples = match &self.samples {
            Samples::U8(v) => Samples::U8(vec![0; v.len()]),
            Samples::F32(v) => Samples::F32(vec![0.0; v.len()]),
        };
        Self {
            shape: self.shape,
            samples,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn into_samples(self) -> Samples {
        self.samples
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.samples {
            Samples::U8(v) => Some(v),
            Samples::F32(_) => None,
        }
    }

    pub fn is_float(&self) -> bool {
        matches!(self.samples, Samples::F32(_))
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.samples
            .get((y * self.shape.width + x) * self.shape.channels + c)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.samples {
            Samples::U8(v) => v.iter().map(|&s| s as f64).collect(),
            Samples::F32(v) => v.iter().map(|&s| s as f64).collect(),
        }
    }
}

/// A stack of frames sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    frames: Vec<Frame>,
}

impl Clip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or_else(|| {
            FrameError::InvalidFrame("clip must contain at least one frame".into())
        })?;
        let shape = first.shape();
        let float = first.is_float();
        for f in &frames[1..] {
            if f.shape() != shape {
                return Err(FrameError::ShapeMismatch {
                    expected: shape,
                    found: f.shape(),
                });
            }
            if f.is_float() != float {
                return Err(FrameError::InvalidFrame(
                    "clip mixes 8-bit and float frames".into(),
                ));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.frames[0].shape()
    }

    pub fn is_float(&self) -> bool {
        self.frames[0].is_float()
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return Err(FrameError::Truncated {
                    expected: self.pos + 1,
                    actual: self.bytes.len(),
                });
            }
            return Err(FrameError::UnsupportedFormat(format!(
                "malformed {what} in header"
            )));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FrameError::UnsupportedFormat(format!("{what} out of range")))
    }
}

/// Decodes a binary PPM (`P6`) or PGM (`P5`) image with maxval 255.
pub fn decode_image(bytes: &[u8]) -> Result<Frame> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        Some(m) => {
            return Err(FrameError::UnsupportedFormat(format!(
                "magic {:?}",
                String::from_utf8_lossy(m)
            )))
        }
        None => return Err(FrameError::UnsupportedFormat("missing magic".into())),
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")?;
    let height = reader.number("height")?;
    let maxval = reader.number("maxval")?;
    if maxval != 255 {
        return Err(FrameError::UnsupportedFormat(format!("maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(FrameError::UnsupportedFormat(format!(
            "{width}x{height} image"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(reader.pos) {
        Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
        Some(_) => {
            return Err(FrameError::UnsupportedFormat(
                "missing raster separator".into(),
            ))
        }
        None => {
            return Err(FrameError::Truncated {
                expected: reader.pos + 1,
                actual: bytes.len(),
            })
        }
    }
    let shape = Shape::new(height, width, channels);
    let payload = &bytes[reader.pos..];
    if payload.len() < shape.len() {
        return Err(FrameError::Truncated {
            expected: shape.len(),
            actual: payload.len(),
        });
    }
    Ok(Frame {
        shape,
        samples: Samples::U8(payload[..shape.len()].to_vec()),
    })
}

/// Encodes an 8-bit frame with the canonical header `P6\n<w> <h>\n255\n` (or `P5`).
pub fn encode_image(frame: &Frame) -> Result<Vec<u8>> {
    let magic = match frame.channels() {
        3 => "P6",
        1 => "P5",
        c => {
            return Err(FrameError::InvalidFrame(format!(
                "cannot encode {c} channels"
            )))
        }
    };
    let data = frame
        .as_u8()
        .ok_or_else(|| FrameError::InvalidFrame("cannot encode float samples".into()))?;
    if data.len() != frame.shape().len() {
        return Err(FrameError::InvalidFrame(
            "sample count does not match shape".into(),
        ));
    }
    let header = format!("{magic}\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    Ok(out)
}

/// File name of frame `index`, e.g. `000017.ppm`.
pub fn frame_file_name(index: usize, extension: &str) -> String {
    format!("{index:06}.{extension}")
}

/// Locates the file for `index` inside a frame directory (`.ppm` preferred over `.pgm`).
pub fn frame_path(frame_dir: &Path, index: usize) -> Option<PathBuf> {
    ["ppm", "pgm"]
        .iter()
        .map(|ext| frame_dir.join(frame_file_name(index, ext)))
        .find(|p| p.is_file())
}

pub fn read_image(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image(&bytes)
}

pub fn write_image(path: &Path, frame: &Frame) -> Result<()> {
    let bytes = encode_image(frame)?;
    fs::write(path, bytes).map_err(|source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the frames at `indices` from a frame directory. Repeated indices
/// produce repeated frames; each distinct file is decoded once.
pub fn read_clip(frame_dir: &Path, indices: &[usize]) -> Result<Clip> {
    let mut cache: Vec<(usize, Frame)> = Vec::new();
    let mut frames = Vec::with_capacity(indices.len());
    for &index in indices {
        if let Some((_, f)) = cache.iter().find(|(i, _)| *i == index) {
            frames.push(f.clone());
            continue;
        }
        let path = frame_path(frame_dir, index).ok_or_else(|| FrameError::MissingFrame {
            index,
            dir: frame_dir.to_path_buf(),
        })?;
        let frame = read_image(&path)?;
        if let Some(first) = frames.first().map(Frame::shape) {
            if frame.shape() != first {
                return Err(FrameError::ShapeMismatch {
                    expected: first,
                    found: frame.shape(),
                });
            }
        }
        cache.push((index, frame.clone()));
        frames.push(frame);
    }
    Clip::new(frames)
}

pub const VIPC_MAGIC: &[u8; 4] = b"VIPC";

/// Serializes a clip as `VIPC` + u32 LE {length, height, width, channels} + raw samples.
///
/// 8-bit clips store one byte per sample; float clips store little-endian
/// f32, so the element width is recoverable from the payload size.
pub fn encode_vipc(clip: &Clip) -> Vec<u8> {
    let shape = clip.shape();
    let n = clip.len() * shape.len();
    let width = if clip.is_float() { 4 } else { 1 };
    let mut out = Vec::with_capacity(20 + n * width);
    out.extend_from_slice(VIPC_MAGIC);
    for v in [clip.len(), shape.height, shape.width, shape.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for frame in clip.frames() {
        match frame.samples() {
            Samples::U8(v) => out.extend_from_slice(v),
            Samples::F32(v) => v
                .iter()
                .for_each(|s| out.extend_from_slice(&s.to_le_bytes())),
        }
    }
    out
}

pub fn decode_vipc(bytes: &[u8]) -> Result<Clip> {
    if bytes.len() < 20 {
        return Err(FrameError::Truncated {
            expected: 20,
            actual: bytes.len(),
        });
    }
    if &bytes[..4] != VIPC_MAGIC {
        return Err(FrameError::UnsupportedFormat("not a VIPC dump".into()));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (length, shape) = (field(0), Shape::new(field(1), field(2), field(3)));
    let n = length * shape.len();
    let payload = &bytes[20..];
    let frames = if payload.len() == n {
        payload
            .chunks_exact(shape.len().max(1))
            .map(|c| Frame::new(shape, Samples::U8(c.to_vec())))
            .collect::<Result<Vec<_>>>()?
    } else if payload.len() == 4 * n {
        payload
            .chunks_exact(4 * shape.len().max(1))
            .map(|c| {
                let v = c
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                Frame::new(shape, Samples::F32(v))
            })
            .collect::<Result<Vec<_>>>()?
    } else if payload.len() < n {
        return Err(FrameError::Truncated {
            expected: n,
            actual: payload.len(),
        });
    } else {
        return Err(FrameError::InvalidFrame(format!(
            "payload of {} bytes matches neither u8 nor f32 layout for {n} samples",
            payload.len()
        )));
    };
    Clip::new(frames)
}
