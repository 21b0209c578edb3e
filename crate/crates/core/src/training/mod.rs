//! Optimization loop, schedule, optimizer, and evaluation metrics.

pub mod adam;
pub mod metrics;
pub mod schedule;
pub mod trainer;

use crate::error::{Error, Result};

pub use adam::{optimizer_step, AdamState};
pub use metrics::{f1_score, MetricsReport};
pub use schedule::lr_at;
pub use trainer::{evaluate, train, LogRecord, TrainOutcome};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 3e-4,
            warmup_ratio: 0.02,
            epochs: 10,
            batch_size: 4,
            grad_accum_steps: 5,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A historically reported 5e-10 initial learning rate, kept verbatim as a
    /// selectable preset. It is far too small to train from scratch; the
    /// working default is 3e-4.
    pub fn reported_lr_preset() -> Self {
        TrainConfig { peak_lr: 5e-10, ..TrainConfig::default() }
    }

    /// Preset for memorizing a small separable set quickly: no gradient
    /// accumulation, 300 optimizer steps on a 16-sample set.
    pub fn overfit_preset() -> Self {
        TrainConfig {
            epochs: 75,
            batch_size: 4,
            grad_accum_steps: 1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return Err(Error::Config(format!(
                "warmup_ratio {} must lie in (0, 1)",
                self.warmup_ratio
            )));
        }
        if self.grad_accum_steps == 0 {
            return Err(Error::Config("grad_accum_steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        Ok(())
    }
}
