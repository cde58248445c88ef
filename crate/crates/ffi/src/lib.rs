//! C ABI over `vippipe`.
//!
//! Every fallible function returns a [`VipStatus`]; on failure a message is
//! available from [`vip_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through `char **` are owned by the caller and released
//! with [`vip_string_free`]. Buffers follow a two-call pattern: pass a null
//! buffer (or one that is too small) to learn the required length.
//!
//! A dataset handle caches the last item it loaded and must not be shared
//! between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vippipe::clip_sampler::{plan_clips, ClipConfig, ClipError, ClipMode};
use vippipe::engine::{load_config, ClipDataset, ConfigError, EngineError, LoadedClip};
use vippipe::frame_io::{encode_vipc, FrameError};
use vippipe::manifest::{load_manifest, validate_manifest, BBox, DatasetManifest, ManifestError};
use vippipe::metrics::{self, MetricError, MetricKind};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VipStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Schema = 5,
    InvalidConfig = 6,
    Infeasible = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Frame = 10,
    Metric = 11,
    UnknownMetric = 12,
    DegenerateMap = 13,
    Panic = 14,
    Internal = 15,
}

/// Clip planning parameters. `mode` is 0 for contiguous, 1 for uniform.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VipClipConfig {
    pub clip_length: i64,
    pub num_clips: i64,
    pub clip_stride: i64,
    pub clip_offset: usize,
    pub random_offset: bool,
    pub mode: u32,
}

/// Axis-aligned box in pixel coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VipBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

/// A loaded manifest.
pub struct VipManifest {
    inner: DatasetManifest,
}

/// A manifest plus run config, iterated item by item.
pub struct VipDataset {
    inner: ClipDataset,
    cached: Option<(usize, LoadedClip)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

static VERSION: &CStr =
    match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };

struct Failure(VipStatus, String);

impl Failure {
    fn new(status: VipStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

fn frame_status(e: &FrameError) -> VipStatus {
    match e {
        FrameError::Io { .. } => VipStatus::Io,
        _ => VipStatus::Frame,
    }
}

fn metric_status(e: &MetricError) -> VipStatus {
    match e {
        MetricError::UnknownMetric(_) => VipStatus::UnknownMetric,
        MetricError::DegenerateMap => VipStatus::DegenerateMap,
        _ => VipStatus::Metric,
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        let status = match &e {
            ManifestError::Parse { .. } => VipStatus::Parse,
            ManifestError::Schema { .. } => VipStatus::Schema,
            ManifestError::Io { .. } => VipStatus::Io,
            ManifestError::Frame(f) => frame_status(f),
            _ => VipStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match &e {
            ConfigError::Parse { .. } => VipStatus::Parse,
            ConfigError::Io { .. } => VipStatus::Io,
            _ => VipStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

impl From<ClipError> for Failure {
    fn from(e: ClipError) -> Self {
        let status = match e {
            ClipError::InvalidConfig(_) => VipStatus::InvalidConfig,
            ClipError::InfeasibleConfig(_) => VipStatus::Infeasible,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        Failure(metric_status(&e), e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Manifest(m) => m.into(),
            EngineError::Config(c) => c.into(),
            EngineError::Clip(c) => c.into(),
            EngineError::Metric(m) => m.into(),
            EngineError::Frame(f) => Failure(frame_status(&f), f.to_string()),
            EngineError::IndexOutOfRange { .. } => Failure(VipStatus::OutOfRange, e.to_string()),
            EngineError::Io { .. } => Failure(VipStatus::Io, e.to_string()),
            other => Failure(VipStatus::InvalidConfig, other.to_string()),
        }
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, recording failures and converting panics into [`VipStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VipStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VipStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            VipStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(
            VipStatus::NullArgument,
            format!("`{name}` is null"),
        ))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn read_str(p: *const c_char, name: &str) -> Result<String, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(VipStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    non_null(out, name)?;
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

/// Copies `data` into `buf` if it fits; always reports the needed length.
///
/// # Safety
/// `buf` must be null or valid for `cap` writes; `out_len` must be valid.
unsafe fn copy_out<T: Copy>(
    data: &[T],
    buf: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), Failure> {
    write_out(out_len, data.len(), "out_len")?;
    if buf.is_null() || cap < data.len() {
        return Err(Failure::new(
            VipStatus::BufferTooSmall,
            format!("buffer holds {cap}, need {}", data.len()),
        ));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    Ok(())
}

/// Library version, matching the `vippipe` crate. Static; do not free.
#[no_mangle]
pub extern "C" fn vip_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from this thread; do not free.
#[no_mangle]
pub extern "C" fn vip_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned through a `char **` out parameter
/// of this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a manifest file or dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_manifest_load(
    path: *const c_char,
    out: *mut *mut VipManifest,
) -> VipStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        let path = read_str(path, "path")?;
        let inner = load_manifest(PathBuf::from(path))?;
        out.write(Box::into_raw(Box::new(VipManifest { inner })));
        Ok(())
    })
}

/// Number of videos in the manifest.
///
/// # Safety
/// `m` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_manifest_video_count(
    m: *const VipManifest,
    out: *mut usize,
) -> VipStatus {
    guard(|| {
        non_null(m, "manifest")?;
        write_out(out, (*m).inner.videos.len(), "out")
    })
}

/// Validates the manifest. Writes the violation count to `out_violations`
/// and, when `out_json` is not null, the report as a JSON string.
///
/// # Safety
/// `m` must be a live handle; out pointers must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_manifest_validate(
    m: *const VipManifest,
    check_files: bool,
    out_violations: *mut usize,
    out_json: *mut *mut c_char,
) -> VipStatus {
    guard(|| {
        non_null(m, "manifest")?;
        let report = validate_manifest(&(*m).inner, check_files);
        write_out(out_violations, report.violations.len(), "out_violations")?;
        if !out_json.is_null() {
            let doc =
                serde_json::json!({ "valid": report.is_valid(), "violations": report.violations });
            out_json.write(into_c_string(doc.to_string()));
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`vip_manifest_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vip_manifest_free(m: *mut VipManifest) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Plans clips for a video of `video_length` frames.
///
/// Indices are written clip after clip into `buf`; `out_len` receives the
/// total index count, `out_clips` the number of clips (all clips have the
/// same length). Returns `BufferTooSmall` with the lengths filled in when
/// `buf` is null or shorter than needed.
///
/// # Safety
/// `cfg` must be valid; `buf` null or valid for `cap` writes; `out_len` and
/// `out_clips` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_plan_clips(
    video_length: usize,
    cfg: *const VipClipConfig,
    seed: u64,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
    out_clips: *mut usize,
) -> VipStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let c = *cfg;
        let mode = match c.mode {
            0 => ClipMode::Contiguous,
            1 => ClipMode::Uniform,
            m => {
                return Err(Failure::new(
                    VipStatus::InvalidConfig,
                    format!("unknown clip mode {m}"),
                ))
            }
        };
        let plan = plan_clips(
            video_length,
            &ClipConfig {
                clip_length: c.clip_length,
                num_clips: c.num_clips,
                clip_stride: c.clip_stride,
                clip_offset: c.clip_offset,
                random_offset: c.random_offset,
                mode,
            },
            seed,
        )?;
        write_out(out_clips, plan.clips.len(), "out_clips")?;
        let flat: Vec<usize> = plan.clips.concat();
        copy_out(&flat, buf, cap, out_len)
    })
}

/// Opens the dataset described by a run config over a manifest. Overrides
/// are `key=value` strings applied on top of the config file.
///
/// # Safety
/// Paths must be NUL-terminated; `overrides` must hold `n_overrides` valid
/// strings (or be null when `n_overrides` is 0); `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_open(
    manifest_path: *const c_char,
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut VipDataset,
) -> VipStatus {
    guard(|| {
        non_null(out, "out")?;
        out.write(ptr::null_mut());
        let manifest_path = read_str(manifest_path, "manifest_path")?;
        let config_path = read_str(config_path, "config_path")?;
        let mut ov = Vec::with_capacity(n_overrides);
        if n_overrides > 0 {
            non_null(overrides, "overrides")?;
            for i in 0..n_overrides {
                ov.push(read_str(*overrides.add(i), "overrides[i]")?);
            }
        }
        let cfg = load_config(PathBuf::from(config_path), &ov)?;
        let manifest = load_manifest(PathBuf::from(manifest_path))?;
        let inner = ClipDataset::from_config(manifest, &cfg)?;
        out.write(Box::into_raw(Box::new(VipDataset {
            inner,
            cached: None,
        })));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_len(ds: *const VipDataset, out: *mut usize) -> VipStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        write_out(out, (*ds).inner.len(), "out")
    })
}

unsafe fn loaded<'a>(ds: *mut VipDataset, index: usize) -> Result<&'a LoadedClip, Failure> {
    non_null(ds, "dataset")?;
    let ds = &mut *ds;
    if ds.cached.as_ref().map(|(i, _)| *i) != Some(index) {
        let item = ds.inner.load(index)?;
        ds.cached = Some((index, item));
    }
    Ok(&ds.cached.as_ref().unwrap().1)
}

/// Shape of item `index` as {length, height, width, channels}; `out_is_float`
/// tells whether samples are f32 (after mean subtraction) or u8.
///
/// # Safety
/// `ds` must be a live handle; `out_shape` valid for 4 writes; `out_is_float`
/// null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_item_shape(
    ds: *mut VipDataset,
    index: usize,
    out_shape: *mut usize,
    out_is_float: *mut bool,
) -> VipStatus {
    guard(|| {
        non_null(out_shape, "out_shape")?;
        let item = loaded(ds, index)?;
        let s = item.clip.shape();
        for (k, v) in [item.clip.len(), s.height, s.width, s.channels]
            .into_iter()
            .enumerate()
        {
            out_shape.add(k).write(v);
        }
        if !out_is_float.is_null() {
            out_is_float.write(item.clip.is_float());
        }
        Ok(())
    })
}

/// Copies item `index` in the VIPC dump format, byte-identical to the
/// `.vipc` file `vippipe dump` writes for the same inputs.
///
/// # Safety
/// `ds` must be a live handle; `buf` null or valid for `cap` writes;
/// `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_item_vipc(
    ds: *mut VipDataset,
    index: usize,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> VipStatus {
    guard(|| {
        let bytes = encode_vipc(&loaded(ds, index)?.clip);
        copy_out(&bytes, buf, cap, out_len)
    })
}

/// Annotation JSON of item `index`, identical to the sidecar `vippipe dump` writes.
///
/// # Safety
/// `ds` must be a live handle and `out_json` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_item_annotations(
    ds: *mut VipDataset,
    index: usize,
    out_json: *mut *mut c_char,
) -> VipStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let item = loaded(ds, index)?;
        let json = item.annotation_json((*ds).inner.manifest());
        out_json.write(into_c_string(json));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`vip_dataset_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vip_dataset_free(ds: *mut VipDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Checks a metric name (`Accuracy`, `IoU`, `AP`, `mAP`, `NSS`, `CC`, any
/// case). Returns `UnknownMetric` for anything else.
///
/// # Safety
/// `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vip_metric_check(name: *const c_char) -> VipStatus {
    guard(|| {
        MetricKind::parse(&read_str(name, "name")?)?;
        Ok(())
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vip_metric_iou(
    a: *const VipBox,
    b: *const VipBox,
    out: *mut f64,
) -> VipStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        let to_box = |v: &VipBox| BBox::new(0, v.xmin, v.ymin, v.xmax, v.ymax);
        write_out(out, metrics::iou(&to_box(&*a), &to_box(&*b)), "out")
    })
}

unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// Fraction of `n` predictions equal to their labels.
///
/// # Safety
/// `pred` and `labels` must hold `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_metric_accuracy(
    pred: *const u32,
    labels: *const u32,
    n: usize,
    out: *mut f64,
) -> VipStatus {
    guard(|| {
        let v = metrics::accuracy(slice(pred, n, "pred")?, slice(labels, n, "labels")?)?;
        write_out(out, v, "out")
    })
}

/// NSS of a predicted map against a fixation map (values > 0 are fixations).
///
/// # Safety
/// `pred` and `fixations` must hold `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_metric_nss(
    pred: *const f64,
    fixations: *const f64,
    n: usize,
    out: *mut f64,
) -> VipStatus {
    guard(|| {
        let fixated: Vec<bool> = slice(fixations, n, "fixations")?
            .iter()
            .map(|&v| v > 0.0)
            .collect();
        let v = metrics::nss_values(slice(pred, n, "pred")?, &fixated)?;
        write_out(out, v, "out")
    })
}

/// Pearson correlation of two maps of `n` values.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vip_metric_cc(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut f64,
) -> VipStatus {
    guard(|| {
        let v = metrics::cc_values(slice(a, n, "a")?, slice(b, n, "b")?)?;
        write_out(out, v, "out")
    })
}
