//! Linear warm-up followed by per-step cosine decay.

use std::f64::consts::PI;

use super::TrainError;

/// Learning rate at `step` (0-based).
///
/// Warm-up starts at `peak / warmup` rather than 0 so the first step already
/// updates the model.
pub fn lr_schedule(step: usize, peak_lr: f64, warmup_steps: usize, total_steps: usize) -> Result<f64, TrainError> {
    if step >= total_steps {
        return Err(TrainError::StepOutOfRange { step, total_steps });
    }
    if warmup_steps == 0 || warmup_steps >= total_steps {
        return Err(TrainError::InvalidConfig(format!(
            "warmup_steps {warmup_steps} must satisfy 0 < warmup_steps < total_steps {total_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(peak_lr * (step + 1) as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(peak_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
