//! The training loop.
//!
//! Each epoch `e` (1-based) rebuilds the clip dataset with seed
//! `derive_seed(seed, e)`, shuffles it with a stream of that seed, loads and
//! featurizes clips in parallel, and steps the optimizer once every
//! `pseudo_batch_loop` mini-batches. Logs carry no wall-clock data, so two
//! runs of the same config produce identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use super::checkpoint::{config_digest, param_digest, resolve_pretrained, Checkpoint};
use super::config::{PretrainedSpec, RunConfig};
use super::dataset::ClipDataset;
use super::loader::ordered_map;
use super::model::{clip_features, MicroModel, Sample, Target};
use super::optim::{accumulate_step, schedule_lr, SgdState, StepSettings};
use super::{check_supported, EngineError};
use crate::manifest::{validate_manifest, DatasetManifest, Split};
use crate::rng::{derive_seed, stream_rng};

pub const LOG_FILE_NAME: &str = "logs.jsonl";
pub const SCALARS_FILE_NAME: &str = "scalars.csv";
pub const CHECKPOINT_DIR_NAME: &str = "checkpoints";

/// Stream id for the per-epoch shuffle; item streams use small ids.
const SHUFFLE_STREAM: u64 = u64::MAX;
/// Optimizer steps per epoch in debug mode.
const DEBUG_STEPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        loss: f64,
        lr: f64,
        samples: usize,
        grad_norm: f64,
        clipped_norm: f64,
    },
    Epoch {
        epoch: usize,
        step: u64,
        loss: f64,
        lr: f64,
        samples: usize,
        param_digest: String,
    },
    Warning {
        message: String,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub model: MicroModel,
    /// Last completed epoch.
    pub epoch: usize,
    pub steps: u64,
    pub param_digest: String,
    /// Sample-weighted mean loss of each epoch run here.
    pub epoch_losses: Vec<f64>,
    pub last_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_path(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir
        .join(CHECKPOINT_DIR_NAME)
        .join(format!("epoch_{epoch}.ckpt"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError {
    let path = path.to_path_buf();
    move |source| EngineError::Io { path, source }
}

/// Picks `save_dir/exp/<timestamp>` (with a `-n` suffix on collision).
fn new_run_dir(cfg: &RunConfig) -> Result<PathBuf, EngineError> {
    let exp_dir = cfg.save_dir.join(&cfg.exp);
    let has_runs = fs::read_dir(&exp_dir)
        .map(|mut entries| entries.any(|e| e.map(|e| e.path().is_dir()).unwrap_or(false)))
        .unwrap_or(false);
    let resuming = matches!(cfg.pretrained, PretrainedSpec::Checkpoint(_));
    if has_runs && !cfg.rerun && !resuming {
        return Err(EngineError::RunExists(exp_dir));
    }
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let mut dir = exp_dir.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        dir = exp_dir.join(format!("{stamp}-{n}"));
        n += 1;
    }
    Ok(dir)
}

struct RunLog {
    out: BufWriter<File>,
    path: PathBuf,
    records: Vec<LogRecord>,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self, EngineError> {
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
            records: Vec::new(),
        })
    }

    fn push(&mut self, record: LogRecord) -> Result<(), EngineError> {
        let line = serde_json::to_string(&record).expect("log records serialize");
        writeln!(self.out, "{line}").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))?;
        self.records.push(record);
        Ok(())
    }

    fn write_scalars(&self, path: &Path) -> Result<(), EngineError> {
        let mut csv = String::from("kind,epoch,step,loss,lr\n");
        for r in &self.records {
            match r {
                LogRecord::Step {
                    epoch,
                    step,
                    loss,
                    lr,
                    ..
                } => csv.push_str(&format!("step,{epoch},{step},{loss},{lr}\n")),
                LogRecord::Epoch {
                    epoch,
                    step,
                    loss,
                    lr,
                    ..
                } => csv.push_str(&format!("epoch,{epoch},{step},{loss},{lr}\n")),
                _ => {}
            }
        }
        fs::write(path, csv).map_err(io_err(path))
    }
}

/// Checks that `manifest` can feed training under `cfg` without touching disk.
pub fn check_train_inputs(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<(), EngineError> {
    check_supported(cfg)?;
    if cfg.load_type != Split::Train {
        return Err(EngineError::InvalidConfig(format!(
            "training needs load_type train, got {}",
            cfg.load_type
        )));
    }
    let report = validate_manifest(manifest, false);
    if let Some(v) = report.violations.first() {
        return Err(EngineError::InvalidManifest(format!(
            "{}: {} ({} violation(s))",
            v.path,
            v.message,
            report.violations.len()
        )));
    }
    for (vi, video) in manifest.split(Split::Train) {
        match video.action_label {
            None => return Err(EngineError::MissingLabel(vi)),
            Some(l) if l as usize >= cfg.labels => {
                return Err(EngineError::InvalidConfig(format!(
                    "video {vi} has label {l} but labels is {}",
                    cfg.labels
                )))
            }
            _ => {}
        }
    }
    if manifest.split(Split::Train).next().is_none() {
        return Err(EngineError::EmptyDataset(Split::Train.to_string()));
    }
    Ok(())
}

/// Trains from `cfg.pretrained` up to `cfg.epoch` completed epochs and
/// returns the run directory with its logs and per-epoch checkpoints.
pub fn train(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<TrainOutcome, EngineError> {
    let fail = |e: EngineError| {
        log::error!("training failed: {e}");
        e
    };
    check_train_inputs(cfg, manifest).map_err(fail)?;
    let init = resolve_pretrained(&cfg.pretrained, cfg).map_err(fail)?;
    let run_dir = new_run_dir(cfg).map_err(fail)?;
    fs::create_dir_all(run_dir.join(CHECKPOINT_DIR_NAME)).map_err(|e| fail(io_err(&run_dir)(e)))?;
    cfg.write_snapshot(&run_dir).map_err(|e| fail(e.into()))?;
    let mut log = RunLog::create(run_dir.join(LOG_FILE_NAME)).map_err(fail)?;
    for w in &init.warnings {
        log::warn!("{w}");
        log.push(LogRecord::Warning { message: w.clone() })
            .map_err(fail)?;
    }
    let result = run_epochs(
        cfg,
        manifest,
        &run_dir,
        init.model,
        init.optimizer,
        init.epoch,
        init.step,
        &mut log,
    );
    let scalars = log.write_scalars(&run_dir.join(SCALARS_FILE_NAME));
    match result {
        Ok(outcome) => {
            scalars?;
            Ok(outcome)
        }
        Err(e) => {
            log::error!("training failed: {e}");
            let _ = log.push(LogRecord::Error {
                message: e.to_string(),
            });
            Err(e)
        }
    }
}

enum Flow {
    Stop,
    Fail(EngineError),
}

impl From<EngineError> for Flow {
    fn from(e: EngineError) -> Self {
        Flow::Fail(e)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
    mut model: MicroModel,
    mut opt: SgdState,
    start_epoch: usize,
    mut step: u64,
    log: &mut RunLog,
) -> Result<TrainOutcome, EngineError> {
    let clip_cfg = cfg.clip_config();
    let transform = cfg.transform_config();
    let digest = config_digest(cfg);
    let mut epoch_losses = Vec::new();
    let mut last_checkpoint = None;

    for epoch in start_epoch + 1..=cfg.epoch {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let ds = ClipDataset::new(
            manifest.clone(),
            Split::Train,
            &clip_cfg,
            transform.clone(),
            epoch_seed,
        )?;
        if ds.is_empty() {
            return Err(EngineError::EmptyDataset(Split::Train.to_string()));
        }
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut stream_rng(epoch_seed, SHUFFLE_STREAM));

        let lr = schedule_lr(cfg.lr, &cfg.milestones, cfg.gamma, epoch - 1);
        let settings = StepSettings {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            grad_max_norm: cfg.grad_max_norm,
        };

        let mut batch: Vec<Sample> = Vec::with_capacity(cfg.batch_size);
        let mut group: Vec<Vec<Sample>> = Vec::with_capacity(cfg.pseudo_batch_loop);
        let mut epoch_steps = 0usize;
        let (mut loss_sum, mut sample_count) = (0.0, 0usize);

        // returns the number of steps taken this epoch
        let mut do_step = |group: &mut Vec<Vec<Sample>>,
                           model: &mut MicroModel,
                           opt: &mut SgdState|
         -> Result<usize, EngineError> {
            let report = accumulate_step(model, group, opt, &settings)?;
            group.clear();
            step += 1;
            epoch_steps += 1;
            loss_sum += report.loss * report.samples as f64;
            sample_count += report.samples;
            log.push(LogRecord::Step {
                epoch,
                step,
                loss: report.loss,
                lr,
                samples: report.samples,
                grad_norm: report.grad_norm,
                clipped_norm: report.clipped_norm,
            })?;
            Ok(epoch_steps)
        };

        let load = |p: usize| -> Result<Sample, EngineError> {
            let loaded = ds.load(order[p])?;
            let label = loaded
                .item
                .label
                .ok_or(EngineError::MissingLabel(loaded.item.video))?;
            Ok(Sample::new(
                clip_features(&loaded.clip, &loaded.annotations),
                Target::Class(label),
            ))
        };
        let flow = ordered_map(
            ds.len(),
            cfg.num_workers,
            |p| load(p).map_err(Flow::Fail),
            |_, sample| {
                batch.push(sample);
                if batch.len() == cfg.batch_size {
                    group.push(std::mem::take(&mut batch));
                    if group.len() == cfg.pseudo_batch_loop {
                        let taken = do_step(&mut group, &mut model, &mut opt)?;
                        if cfg.debug && taken >= DEBUG_STEPS {
                            return Err(Flow::Stop);
                        }
                    }
                }
                Ok(())
            },
        );
        match flow {
            Ok(()) => {
                // a short final pseudo-batch still gets its step
                if !batch.is_empty() {
                    group.push(std::mem::take(&mut batch));
                }
                if !group.is_empty() {
                    do_step(&mut group, &mut model, &mut opt)?;
                }
            }
            Err(Flow::Stop) => {}
            Err(Flow::Fail(e)) => return Err(e),
        }

        let digest_now = param_digest(&model.params());
        let epoch_loss = loss_sum / sample_count.max(1) as f64;
        epoch_losses.push(epoch_loss);
        log.push(LogRecord::Epoch {
            epoch,
            step,
            loss: epoch_loss,
            lr,
            samples: sample_count,
            param_digest: digest_now,
        })?;
        let path = checkpoint_path(run_dir, epoch);
        Checkpoint {
            model: model.clone(),
            optimizer: Some(opt.clone()),
            epoch,
            step,
            rng_state: derive_seed(cfg.seed, epoch as u64 + 1),
            config_digest: digest.clone(),
        }
        .save(&path)?;
        log::info!("epoch {epoch}: loss {epoch_loss:.6}, lr {lr}");
        last_checkpoint = Some(path);
    }

    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        param_digest: param_digest(&model.params()),
        model,
        epoch: cfg.epoch.max(start_epoch),
        steps: step,
        epoch_losses,
        last_checkpoint,
    })
}
