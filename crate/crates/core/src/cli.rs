//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! outcomes to exit codes: 0 on success, 1 on validation or runtime failure,
//! 2 on usage errors.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::clip_sampler::{ClipConfig, ClipMode};
use crate::engine::{self, ClipDataset, EngineError, PretrainedSpec, RunConfig};
use crate::frame_io::{encode_vipc, read_image};
use crate::manifest::{
    self, generate_synthetic_dataset, load_manifest, validate_manifest, DatasetManifest, Split,
    SynthSpec,
};
use crate::metrics::{self, Detection, GroundTruth, Interpolation, MetricKind, SaliencyPair};
use crate::rng::derive_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vippipe",
    version,
    about = "Video experiment pipeline: manifests, clips, transforms, metrics and training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest for schema and consistency problems
    Validate(ValidateArgs),
    /// Generate the synthetic moving-square dataset
    Synth(SynthArgs),
    /// Print the clip plan of every video in a manifest
    Plan(PlanArgs),
    /// Write every transformed clip of a config's split as VIPC dumps
    Preprocess(PreprocessArgs),
    /// Train a model from a YAML config; extra `--key value` pairs override the config
    Train(TrainArgs),
    /// Evaluate a model (--config) or score a prediction file (--metric)
    Eval(EvalArgs),
    /// Dump one transformed dataset item as VIPC plus annotation JSON
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Manifest file or dataset directory
    pub manifest: PathBuf,
    /// Also check that frame and map files exist
    #[arg(long)]
    pub check_files: bool,
    /// Emit one JSON document
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub videos: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Number of trailing videos assigned to the val split
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Inclusive frame-count range, MIN:MAX
    #[arg(long, default_value = "20:40", value_parser = parse_pair)]
    pub length: (usize, usize),
    /// Frame size, HEIGHTxWIDTH
    #[arg(long, default_value = "48x64", value_parser = parse_shape)]
    pub shape: (usize, usize),
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 16, allow_hyphen_values = true)]
    pub clip_length: i64,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    pub num_clips: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub clip_stride: i64,
    #[arg(long, default_value_t = 0)]
    pub clip_offset: usize,
    #[arg(long)]
    pub random_offset: bool,
    #[arg(long, default_value = "contiguous")]
    pub mode: ClipMode,
    /// Only videos of this split
    #[arg(long)]
    pub split: Option<Split>,
    /// Seed for random offsets; video v uses a seed derived from (seed, v)
    #[arg(long, default_value_t = 999)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Manifest to train on; defaults to the config's json_path
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Config overrides: `--key value`, `--key=value` or `key=value`
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run config; evaluates its model on the load_type split
    #[arg(long, conflicts_with_all = ["metric", "pred", "gt"])]
    pub config: Option<PathBuf>,
    /// 0, 1 or a checkpoint path (overrides the config's pretrained)
    #[arg(long, requires = "config")]
    pub pretrained: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// accuracy, ap, map, nss or cc
    #[arg(long, requires_all = ["pred", "gt"])]
    pub metric: Option<String>,
    /// Prediction file (JSON)
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth manifest
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value = "eleven")]
    pub interp: Interpolation,
    /// Class scored by `ap`
    #[arg(long)]
    pub class: Option<u32>,
    /// Write the report here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Config overrides when --config is given
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub item: usize,
    /// Output directory for item_<n>.vipc and item_<n>.json
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

/// A failed command: usage problems exit 2, everything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl<E: Into<EngineError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failure(e.into().to_string())
    }
}

type CliResult = Result<i32, CliError>;

fn failure(msg: impl Into<String>) -> CliError {
    CliError::Failure(msg.into())
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| failure(format!("{}: {e}", path.display()))
}

/// Turns `--key value`, `--key=value` and `key=value` tokens into `key=value`.
pub fn normalize_overrides(tokens: &[String]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if let Some(flag) = t.strip_prefix("--") {
            if flag.contains('=') {
                out.push(flag.to_string());
            } else {
                let value = tokens
                    .get(i + 1)
                    .ok_or_else(|| CliError::Usage(format!("override `{t}` needs a value")))?;
                out.push(format!("{flag}={value}"));
                i += 1;
            }
        } else if t.contains('=') {
            out.push(t.clone());
        } else {
            return Err(CliError::Usage(format!("unexpected argument `{t}`")));
        }
        i += 1;
    }
    Ok(out)
}

/// Pulls `--json` out of forwarded tokens so it may appear after overrides.
fn take_json_flag(tokens: &mut Vec<String>) -> bool {
    let before = tokens.len();
    tokens.retain(|t| t != "--json");
    tokens.len() != before
}

fn emit(json_mode: bool, doc: serde_json::Value, text: impl FnOnce() -> String) {
    let mut stdout = std::io::stdout().lock();
    let out = if json_mode {
        serde_json::to_string_pretty(&doc).expect("json output")
    } else {
        text()
    };
    if !out.is_empty() {
        let _ = writeln!(stdout, "{out}");
    }
}

fn load_config_usage(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    engine::load_config(path, overrides).map_err(|e| match e {
        engine::ConfigError::MalformedOverride(_) => CliError::Usage(e.to_string()),
        other => failure(other.to_string()),
    })
}

fn manifest_for(cfg: &RunConfig, explicit: Option<&Path>) -> Result<DatasetManifest, CliError> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None if cfg.json_path.as_os_str().is_empty() => {
            return Err(CliError::Usage(
                "no manifest: pass --manifest or set json_path".into(),
            ))
        }
        None => cfg.manifest_path(),
    };
    Ok(load_manifest(path)?)
}

fn cmd_validate(a: &ValidateArgs) -> CliResult {
    let m = load_manifest(&a.manifest)?;
    let report = validate_manifest(&m, a.check_files);
    emit(
        a.json,
        json!({ "valid": report.is_valid(), "violations": report.violations }),
        || {
            report
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.path, v.message))
                .collect::<Vec<_>>()
                .join("\n")
        },
    );
    Ok(if report.is_valid() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        n_videos: a.videos,
        val_videos: a.val,
        length_range: a.length,
        shape: a.shape,
        n_classes: a.classes,
        seed: a.seed,
    };
    let m = generate_synthetic_dataset(&spec, &a.out)?;
    let frames: usize = m.videos.iter().map(|v| v.length).sum();
    let path = a.out.join(manifest::MANIFEST_FILE_NAME);
    emit(
        a.json,
        json!({ "manifest": path, "videos": m.videos.len(), "frames": frames }),
        || {
            format!(
                "wrote {} videos ({frames} frames) to {}",
                m.videos.len(),
                path.display()
            )
        },
    );
    Ok(EXIT_OK)
}

fn cmd_plan(a: &PlanArgs) -> CliResult {
    let cfg = ClipConfig {
        clip_length: a.clip_length,
        num_clips: a.num_clips,
        clip_stride: a.clip_stride,
        clip_offset: a.clip_offset,
        random_offset: a.random_offset,
        mode: a.mode,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let m = load_manifest(&a.manifest)?;
    let mut clips = Vec::new();
    for (vi, v) in m.videos.iter().enumerate() {
        if a.split.is_some_and(|s| s != v.split) {
            continue;
        }
        let plan = crate::clip_sampler::plan_clips(v.length, &cfg, derive_seed(a.seed, vi as u64))
            .map_err(EngineError::from)?;
        for (ci, indices) in plan.clips.into_iter().enumerate() {
            clips.push(json!({ "video": vi, "path": v.path, "clip": ci, "indices": indices }));
        }
    }
    emit(
        a.json,
        json!({ "count": clips.len(), "clips": clips }),
        || {
            clips
                .iter()
                .map(|c| c["indices"].to_string())
                .collect::<Vec<_>>()
                .join("\n")
        },
    );
    Ok(EXIT_OK)
}

fn write_item(
    ds: &ClipDataset,
    i: usize,
    out: &Path,
) -> Result<(PathBuf, PathBuf, [usize; 4]), CliError> {
    let loaded = ds.load(i)?;
    let vipc = out.join(format!("item_{i:06}.vipc"));
    let ann = out.join(format!("item_{i:06}.json"));
    fs::write(&vipc, encode_vipc(&loaded.clip)).map_err(io_failure(&vipc))?;
    fs::write(&ann, loaded.annotation_json(ds.manifest())).map_err(io_failure(&ann))?;
    let s = loaded.clip.shape();
    Ok((
        vipc,
        ann,
        [loaded.clip.len(), s.height, s.width, s.channels],
    ))
}

fn cmd_preprocess(a: &PreprocessArgs) -> CliResult {
    let cfg = load_config_usage(&a.config, &[])?;
    let m = load_manifest(&a.manifest)?;
    let ds = ClipDataset::from_config(m, &cfg)?;
    fs::create_dir_all(&a.out).map_err(io_failure(&a.out))?;
    let written =
        engine::loader::ordered_collect(ds.len(), cfg.num_workers, |i| write_item(&ds, i, &a.out))?;
    emit(
        a.json,
        json!({ "items": written.len(), "out": a.out }),
        || format!("wrote {} clips to {}", written.len(), a.out.display()),
    );
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let mut tokens = a.overrides.clone();
    let json_mode = take_json_flag(&mut tokens) || a.json;
    let overrides = normalize_overrides(&tokens)?;
    let cfg = load_config_usage(&a.config, &overrides)?;
    let m = manifest_for(&cfg, a.manifest.as_deref())?;
    let out = engine::train(&cfg, &m)?;
    let final_loss = out.epoch_losses.last().copied();
    emit(
        json_mode,
        json!({
            "run_dir": out.run_dir,
            "epoch": out.epoch,
            "steps": out.steps,
            "param_digest": out.param_digest,
            "final_loss": final_loss,
            "checkpoint": out.last_checkpoint,
        }),
        || {
            format!(
                "run {} finished at epoch {} ({} steps)",
                out.run_dir.display(),
                out.epoch,
                out.steps
            )
        },
    );
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let mut tokens = a.overrides.clone();
    let json_mode = take_json_flag(&mut tokens) || a.json;
    let doc = match (&a.config, &a.metric) {
        (Some(config), None) => {
            let overrides = normalize_overrides(&tokens)?;
            let cfg = load_config_usage(config, &overrides)?;
            let weights = match &a.pretrained {
                Some(p) => p
                    .parse::<PretrainedSpec>()
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => cfg.pretrained.clone(),
            };
            let m = manifest_for(&cfg, a.manifest.as_deref())?;
            serde_json::to_value(engine::evaluate(&cfg, &m, &weights)?).expect("report")
        }
        (None, Some(metric)) => {
            if !tokens.is_empty() {
                return Err(CliError::Usage(format!("unexpected arguments {tokens:?}")));
            }
            score_predictions(a, metric)?
        }
        _ => {
            return Err(CliError::Usage(
                "eval needs either --config or --metric/--pred/--gt".into(),
            ))
        }
    };
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&doc).expect("report"))
            .map_err(io_failure(out))?;
    }
    emit(json_mode, doc.clone(), || {
        format!(
            "{} = {}",
            doc["metric"].as_str().unwrap_or("?"),
            doc["value"]
        )
    });
    Ok(EXIT_OK)
}

#[derive(Deserialize)]
struct LabelPrediction {
    path: String,
    label: u32,
}

#[derive(Deserialize)]
struct MapPrediction {
    path: String,
    index: usize,
    map: String,
}

/// Image id of frame `index` of `video_path` in detection files.
pub fn image_id(video_path: &str, index: usize) -> String {
    format!("{video_path}/{index:06}")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", path.display())))
}

fn score_predictions(a: &EvalArgs, metric: &str) -> Result<serde_json::Value, CliError> {
    let kind = MetricKind::parse(metric).map_err(|e| CliError::Usage(e.to_string()))?;
    let (pred_path, gt_path) = (a.pred.as_ref().unwrap(), a.gt.as_ref().unwrap());
    let gt = load_manifest(gt_path)?;
    let metric_err = |e: metrics::MetricError| failure(e.to_string());
    let (value, count) = match kind {
        MetricKind::Accuracy => {
            let preds: Vec<LabelPrediction> = read_json(pred_path)?;
            let by_path: HashMap<&str, Option<u32>> = gt
                .videos
                .iter()
                .map(|v| (v.path.as_str(), v.action_label))
                .collect();
            let mut p = Vec::new();
            let mut l = Vec::new();
            for pred in &preds {
                let label = by_path
                    .get(pred.path.as_str())
                    .copied()
                    .flatten()
                    .ok_or_else(|| {
                        failure(format!("no labelled video `{}` in ground truth", pred.path))
                    })?;
                p.push(pred.label);
                l.push(label);
            }
            (metrics::accuracy(&p, &l).map_err(metric_err)?, p.len())
        }
        MetricKind::Ap | MetricKind::Map => {
            let dets: Vec<Detection> = read_json(pred_path)?;
            let mut gts = GroundTruth::new();
            for v in &gt.videos {
                for f in &v.frames {
                    if !f.boxes.is_empty() {
                        gts.entry(image_id(&v.path, f.index))
                            .or_default()
                            .extend(f.boxes.iter().copied());
                    }
                }
            }
            let value = if kind == MetricKind::Ap {
                let classes = metrics::gt_classes(&gts);
                let class = match (a.class, classes.as_slice()) {
                    (Some(c), _) => c,
                    (None, [only]) => *only,
                    _ => {
                        return Err(CliError::Usage(
                            "ap over several classes needs --class".into(),
                        ))
                    }
                };
                metrics::average_precision(&dets, &gts, class, a.iou_threshold, a.interp)
            } else {
                metrics::mean_ap(
                    &dets,
                    &gts,
                    &metrics::gt_classes(&gts),
                    a.iou_threshold,
                    a.interp,
                )
            }
            .map_err(metric_err)?;
            (value, dets.len())
        }
        MetricKind::Nss | MetricKind::Cc => {
            let preds: Vec<MapPrediction> = read_json(pred_path)?;
            let base = pred_path.parent().unwrap_or(Path::new("."));
            let mut total = 0.0;
            for p in &preds {
                let video = gt
                    .videos
                    .iter()
                    .find(|v| v.path == p.path)
                    .ok_or_else(|| failure(format!("no video `{}` in ground truth", p.path)))?;
                let ann = video.annotation(p.index).ok_or_else(|| {
                    failure(format!(
                        "no annotation for frame {} of `{}`",
                        p.index, p.path
                    ))
                })?;
                let predicted =
                    read_image(&base.join(&p.map)).map_err(|e| failure(e.to_string()))?;
                let key = if kind == MetricKind::Nss {
                    &ann.fixations
                } else {
                    &ann.saliency_map
                };
                let gt_map = key.as_ref().ok_or_else(|| {
                    failure(format!(
                        "frame {} of `{}` has no ground-truth map",
                        p.index, p.path
                    ))
                })?;
                let gt_map = read_image(&gt.resolve(gt_map)).map_err(|e| failure(e.to_string()))?;
                total += if kind == MetricKind::Nss {
                    metrics::nss(&SaliencyPair {
                        predicted,
                        fixations: gt_map,
                        gt_continuous: None,
                    })
                } else {
                    metrics::cc(&predicted, &gt_map)
                }
                .map_err(metric_err)?;
            }
            if preds.is_empty() {
                return Err(metric_err(metrics::MetricError::EmptyInput));
            }
            (total / preds.len() as f64, preds.len())
        }
        MetricKind::Iou => {
            return Err(CliError::Usage(
                "eval --metric supports accuracy, ap, map, nss and cc".into(),
            ))
        }
    };
    Ok(json!({ "metric": kind.name(), "value": value, "count": count }))
}

fn cmd_dump(a: &DumpArgs) -> CliResult {
    let cfg = load_config_usage(&a.config, &[])?;
    let m = load_manifest(&a.manifest)?;
    let ds = ClipDataset::from_config(m, &cfg)?;
    if a.item >= ds.len() {
        return Err(failure(format!(
            "item {} out of range for dataset of {}",
            a.item,
            ds.len()
        )));
    }
    fs::create_dir_all(&a.out).map_err(io_failure(&a.out))?;
    let (vipc, ann, shape) = write_item(&ds, a.item, &a.out)?;
    emit(
        a.json,
        json!({ "item": a.item, "items": ds.len(), "clip": vipc, "annotations": ann, "shape": shape }),
        || format!("{}\n{}", vipc.display(), ann.display()),
    );
    Ok(EXIT_OK)
}

pub fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dump(a) => cmd_dump(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_FAILURE
        }
    }
}
