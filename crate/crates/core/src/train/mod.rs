//! MSE training with Adam and a plateau schedule.

mod adam;
mod loss;
mod schedule;
mod trainer;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use loss::mse_loss;
pub use schedule::{PlateauSchedule, ScheduleAction};
pub use trainer::{evaluate_mse, EpochLog, StopReason, TrainData, TrainOutcome, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub patience: usize,
    pub decay_factor: f64,
    /// Training stops once the learning rate falls below this.
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_grad: bool,
    pub max_grad_norm: f64,
    /// Stride between training windows; half the window length if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_stride: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            patience: 10,
            decay_factor: 0.1,
            min_lr: 1e-6,
            batch_size: 128,
            max_epochs: 200,
            seed: 0,
            clip_grad: true,
            max_grad_norm: 10.0,
            train_stride: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if !(self.lr > 0.0 && self.min_lr < self.lr) {
            return bad(format!("need 0 < min_lr < lr, got lr={} min_lr={}", self.lr, self.min_lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive".into());
        }
        if self.clip_grad && !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive".into());
        }
        if self.train_stride == Some(0) {
            return bad("train_stride must be positive".into());
        }
        Ok(())
    }

    pub fn stride_for(&self, window_len: usize) -> usize {
        self.train_stride.unwrap_or((window_len / 2).max(1))
    }
}
