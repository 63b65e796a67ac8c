use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning-rate schedule with a terminal learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleAction {
    Keep,
    Decay { from: f64, to: f64 },
    Terminate,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> Self {
        Self {
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            factor,
            min_lr,
        }
    }

    /// Feeds one epoch's validation loss. An epoch improves when its loss
    /// is strictly below the best so far; `patience` epochs without
    /// improvement multiply the rate by `factor`. Once the rate drops
    /// strictly below `min_lr` training stops. The comparison allows for
    /// rounding in the repeated products, so `1e-3 * 0.1^3` counts as
    /// `1e-6`, not below it.
    pub fn step(&mut self, val_loss: f64) -> ScheduleAction {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return ScheduleAction::Keep;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return ScheduleAction::Keep;
        }
        self.bad_epochs = 0;
        let from = self.lr;
        self.lr *= self.factor;
        if self.lr < self.min_lr * (1.0 - 1e-9) {
            ScheduleAction::Terminate
        } else {
            ScheduleAction::Decay { from, to: self.lr }
        }
    }
}
