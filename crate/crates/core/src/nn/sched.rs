//! Reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f32,
    pub min_lr: f32,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            factor: 0.5,
            min_lr: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f32,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f32, config: PlateauConfig) -> Self {
        Self {
            config,
            lr: initial_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    /// Record an epoch loss and return the learning rate for the next epoch.
    /// A reduction that would take the rate below `min_lr` is skipped, so the
    /// rate stays on the `lr0 * factor^k` ladder.
    pub fn step(&mut self, epoch_loss: f64) -> f32 {
        if epoch_loss < self.best {
            self.best = epoch_loss;
            self.bad_epochs = 0;
            return self.lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.config.patience {
            self.bad_epochs = 0;
            let next = self.lr * self.config.factor;
            if next >= self.config.min_lr {
                self.lr = next;
            }
        }
        self.lr
    }
}
