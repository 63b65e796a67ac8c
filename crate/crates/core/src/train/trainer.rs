use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dws_autodiff::ops::NormMode;
use dws_autodiff::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{clip_grad_norm, mse_loss, Adam, PlateauSchedule, ScheduleAction, TrainConfig};
use crate::checkpoint::{Checkpoint, TrainState};
use crate::data::{batch_tensors, ImuWindow, Normalizer};
use crate::error::{io_err, Error, Result};
use crate::model::DwsformerModel;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,train_mode,val_mode";

/// Normalised training and validation windows.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<ImuWindow>,
    pub val: Vec<ImuWindow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss with batch norm in training mode.
    pub train_loss: f64,
    /// Loss over the validation windows with batch norm in inference mode.
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_mode: String,
    pub val_mode: String,
}

impl EpochLog {
    pub fn to_csv(logs: &[EpochLog]) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for l in logs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                l.epoch, l.train_loss, l.val_loss, l.lr, l.train_mode, l.val_mode
            );
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EpochLog>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(LOG_HEADER) {
            return Err(Error::Data("training log has an unexpected header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || Error::Data(format!("malformed training log line: {line}"));
                if f.len() != 6 {
                    return Err(bad());
                }
                Ok(EpochLog {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    train_loss: f[1].parse().map_err(|_| bad())?,
                    val_loss: f[2].parse().map_err(|_| bad())?,
                    lr: f[3].parse().map_err(|_| bad())?,
                    train_mode: f[4].to_string(),
                    val_mode: f[5].to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    /// The learning rate decayed below its floor.
    MinLr,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: DwsformerModel<f32>,
    pub normalizer: Option<Normalizer>,
    pub adam: Adam<f32>,
    pub schedule: PlateauSchedule,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: DwsformerModel<f32>, config: TrainConfig, normalizer: Option<Normalizer>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(config.lr, config.adam),
            schedule: PlateauSchedule::new(config.lr, config.patience, config.decay_factor, config.min_lr),
            config,
            model,
            normalizer,
            epoch: 0,
            best_epoch: 0,
            log: Vec::new(),
            out_dir: None,
        })
    }

    /// Continues a run from a checkpoint that carries optimiser state. The
    /// shuffling order of later epochs matches an uninterrupted run.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let state = ckpt
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training state to resume from".into()))?;
        state.config.validate()?;
        Ok(Self {
            config: state.config,
            model: ckpt.model,
            normalizer: ckpt.normalizer,
            adam: state.adam,
            schedule: state.schedule,
            epoch: state.epoch,
            best_epoch: state.best_epoch,
            log: Vec::new(),
            out_dir: None,
        })
    }

    /// Enables checkpoints and the CSV log under `dir`. When resuming, rows
    /// of an existing log up to the current epoch are kept.
    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log_path = dir.join(LOG_FILE);
        if self.epoch > 0 && self.log.is_empty() && log_path.exists() {
            let text = std::fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
            self.log = EpochLog::parse_csv(&text)?
                .into_iter()
                .filter(|l| l.epoch <= self.epoch)
                .collect();
        }
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn out_dir(&self) -> Option<&Path> {
        self.out_dir.as_deref()
    }

    /// Snapshot of the run; gradients are not part of it.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut model = self.model.clone();
        model.params_mut().zero_grads();
        Checkpoint {
            model,
            normalizer: self.normalizer.clone(),
            train: Some(TrainState {
                epoch: self.epoch,
                best_epoch: self.best_epoch,
                config: self.config.clone(),
                adam: self.adam.clone(),
                schedule: self.schedule.clone(),
            }),
        }
    }

    /// Shuffled mini-batches for `epoch` (1-based). A trailing batch of a
    /// single window is merged into the one before it.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
        batches
    }

    /// One optimiser step on a batch; returns the batch loss. The update is
    /// skipped when the loss is not finite.
    pub fn train_batch(&mut self, windows: &[&ImuWindow]) -> Result<f64> {
        let (x, y) = batch_tensors(windows)?;
        let tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let mut pass = self.model.forward(&tape, &xv, NormMode::Train, true)?;
        let loss = mse_loss(&pass.output, &yv)?;
        let value = loss.value().item()? as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        let mut grads = tape.backward(&loss)?;
        let params = self.model.params_mut();
        pass.bindings.write_grads(&mut grads, params)?;
        pass.bindings.commit_stats(params)?;
        if self.config.clip_grad {
            clip_grad_norm(params, self.config.max_grad_norm);
        }
        self.adam.lr = self.schedule.lr;
        self.adam.step(params)?;
        Ok(value)
    }

    /// Inference-mode mean squared error over `windows`, batched.
    pub fn evaluate(&self, windows: &[ImuWindow]) -> Result<f64> {
        evaluate_mse(&self.model, windows, self.config.batch_size)
    }

    fn train_epoch(&mut self, train: &[ImuWindow], epoch: usize) -> Result<f64> {
        let batches = self.epoch_batches(train.len(), epoch);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in batches {
            let batch: Vec<&ImuWindow> = idx.iter().map(|&i| &train[i]).collect();
            let loss = self.train_batch(&batch)?;
            if !loss.is_finite() {
                return Ok(loss);
            }
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        Ok(sum / count as f64)
    }

    fn diverged(&self, epoch: usize) -> Error {
        let last_good = self
            .out_dir
            .as_ref()
            .map(|d| d.join(BEST_CHECKPOINT))
            .filter(|p| p.exists());
        Error::Diverged { epoch, last_good }
    }

    /// Trains for one epoch, validates, steps the schedule and writes
    /// checkpoints.
    pub fn step_epoch(&mut self, data: &TrainData) -> Result<(EpochLog, ScheduleAction)> {
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Data(format!(
                "training needs windows in both parts (train {}, val {})",
                data.train.len(),
                data.val.len()
            )));
        }
        let epoch = self.epoch + 1;
        let lr = self.schedule.lr;
        let train_loss = self.train_epoch(&data.train, epoch)?;
        if !train_loss.is_finite() {
            return Err(self.diverged(epoch));
        }
        let val_loss = self.evaluate(&data.val)?;
        if !val_loss.is_finite() {
            return Err(self.diverged(epoch));
        }
        self.epoch = epoch;
        let improved = val_loss < self.schedule.best;
        let action = self.schedule.step(val_loss);
        if let ScheduleAction::Decay { from, to } = action {
            log::info!("epoch {epoch}: learning rate {from:e} -> {to:e}");
        }
        if improved {
            self.best_epoch = epoch;
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            train_mode: "train".into(),
            val_mode: "eval".into(),
        };
        self.log.push(entry.clone());
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        if let Some(dir) = &self.out_dir {
            let ckpt = self.checkpoint();
            if improved {
                ckpt.save(dir.join(BEST_CHECKPOINT))?;
            }
            ckpt.save(dir.join(LAST_CHECKPOINT))?;
            let path = dir.join(LOG_FILE);
            std::fs::write(&path, EpochLog::to_csv(&self.log)).map_err(io_err(&path))?;
        }
        Ok((entry, action))
    }

    /// Trains until the epoch budget runs out or the learning rate falls
    /// below its floor.
    pub fn run(&mut self, data: &TrainData) -> Result<TrainOutcome> {
        let mut stop = StopReason::MaxEpochs;
        while self.epoch < self.config.max_epochs {
            let (_, action) = self.step_epoch(data)?;
            if action == ScheduleAction::Terminate {
                stop = StopReason::MinLr;
                break;
            }
        }
        let paths = |name: &str| self.out_dir.as_ref().map(|d| d.join(name));
        Ok(TrainOutcome {
            log: self.log.clone(),
            best_epoch: self.best_epoch,
            best_val_loss: self.schedule.best,
            stop,
            best_checkpoint: paths(BEST_CHECKPOINT).filter(|p| p.exists()),
            last_checkpoint: paths(LAST_CHECKPOINT),
        })
    }
}

/// Inference-mode mean squared error of `model` over `windows`.
pub fn evaluate_mse(model: &DwsformerModel<f32>, windows: &[ImuWindow], batch_size: usize) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&ImuWindow> = chunk.iter().collect();
        let (x, _) = batch_tensors(&refs)?;
        let pred = model.predict(&x)?;
        for (p, w) in pred.data().chunks(2).zip(chunk) {
            sum += (p[0] as f64 - w.target[0]).powi(2) + (p[1] as f64 - w.target[1]).powi(2);
        }
        count += 2 * chunk.len();
    }
    Ok(sum / count as f64)
}
