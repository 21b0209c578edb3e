//! Cosine learning-rate schedule with linear warmup.

use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Learning rate at `step` out of `total_steps`.
///
/// Linear ramp from 0 to the peak over `ceil(warmup_ratio * total_steps)`
/// steps (at least one), then cosine decay
/// `peak * 0.5 * (1 + cos(pi * (step - w) / (total - w)))` down to 0.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("lr_at: total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Contract(format!(
            "lr_at: step {step} beyond total {total_steps}"
        )));
    }
    let warmup = ((config.warmup_ratio * total_steps as f64).ceil() as usize).max(1);
    if step <= warmup {
        return Ok(config.peak_lr * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(config.peak_lr);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(config.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
