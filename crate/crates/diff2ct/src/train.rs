//! Training driver: manifest in, per-step CSV log and checkpoints out.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use diff2ct_core::training::{running_loss, ModelKind, StepRecord, TrainConfig, Trainer, TrainingCase};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::manifest::{base_dir, load_case, Manifest, Split};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,t,voxel,axial,coronal,sagittal,total";
pub const FINAL_CHECKPOINT: &str = "model.dckp";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub kind: ModelKind,
    pub resume: Option<PathBuf>,
    /// Progress line on stderr every this many steps; 0 is silent.
    pub progress_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { kind: ModelKind::Diffusion, resume: None, progress_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    /// Running-average loss over the first and last `RUNNING_WINDOW` steps of this invocation.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub const RUNNING_WINDOW: usize = 50;

pub fn log_line(r: &StepRecord) -> String {
    let l = &r.loss;
    format!("{},{},{},{},{},{},{}", r.step, r.t, l.voxel_term, l.proj_axial, l.proj_coronal, l.proj_sagittal, l.total)
}

pub fn step_checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.dckp"))
}

/// Training-split cases, fused and ready for the trainer.
pub fn load_training_cases(manifest_path: &Path) -> Result<Vec<TrainingCase>> {
    let manifest = Manifest::load(manifest_path)?;
    let base = base_dir(manifest_path);
    let cases = manifest
        .split(Split::Train)
        .map(|rec| {
            let c = load_case(&base, rec)?;
            TrainingCase::new(&rec.case_id, &c.ct, &c.lateral, &c.frontal).map_err(Error::core(format!("case `{}`", rec.case_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    if cases.is_empty() {
        return Err(Error::Manifest("no training cases".into()));
    }
    Ok(cases)
}

/// Fields that may change between a checkpoint and its resumption.
fn resumable(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig { steps: None, epochs: 0, checkpoint_every: 0, ..cfg.clone() }
}

/// Keeps the header and rows up to `step` of an existing log.
fn truncated_log(path: &Path, step: u64) -> Result<String> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0 || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn train(manifest_path: &Path, cfg: &TrainConfig, out_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate().map_err(Error::core("config"))?;
    let cases = load_training_cases(manifest_path)?;
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let log_path = out_dir.join(LOG_FILE);
    let (mut trainer, prefix) = match &opts.resume {
        None => (Trainer::new(cfg.clone(), opts.kind, &cases).map_err(Error::core("trainer"))?, format!("{LOG_HEADER}\n")),
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if ckpt.kind != opts.kind || resumable(&ckpt.config) != resumable(cfg) {
                return Err(Error::Usage(format!("{} was written by a different model or configuration", p.display())));
            }
            let prefix = if log_path.exists() { truncated_log(&log_path, ckpt.state.step)? } else { format!("{LOG_HEADER}\n") };
            (Trainer::resume(cfg.clone(), opts.kind, &cases, ckpt.state).map_err(Error::core("trainer"))?, prefix)
        }
    };
    let file = File::create(&log_path).map_err(Error::io(&log_path))?;
    let mut log = BufWriter::new(file);
    log.write_all(prefix.as_bytes()).map_err(Error::io(&log_path))?;

    let save = |trainer: &Trainer, path: &Path| {
        let ckpt = Checkpoint { config: cfg.clone(), kind: opts.kind, state: trainer.state() };
        save_checkpoint(&ckpt, path)
    };
    let total = trainer.total_steps();
    let mut totals = Vec::new();
    while !trainer.is_finished() {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush().map_err(Error::io(&log_path))?;
                return Err(Error::core("training aborted")(e));
            }
        };
        writeln!(log, "{}", log_line(&record)).map_err(Error::io(&log_path))?;
        totals.push(record.loss.total);
        if opts.progress_every > 0 && (record.step % opts.progress_every == 0 || record.step == total) {
            let (_, recent) = running_loss(&totals, RUNNING_WINDOW);
            eprintln!("step {}/{total} loss {:.5} (running {recent:.5})", record.step, record.loss.total);
        }
        if cfg.checkpoint_every > 0 && record.step % cfg.checkpoint_every == 0 {
            log.flush().map_err(Error::io(&log_path))?;
            save(&trainer, &step_checkpoint_path(out_dir, record.step))?;
        }
    }
    log.flush().map_err(Error::io(&log_path))?;
    let checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save(&trainer, &checkpoint)?;
    let (initial_loss, final_loss) = if totals.is_empty() { (f64::NAN, f64::NAN) } else { running_loss(&totals, RUNNING_WINDOW) };
    Ok(TrainSummary { steps: trainer.steps_done(), initial_loss, final_loss, checkpoint, log: log_path })
}
