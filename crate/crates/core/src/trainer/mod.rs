//! Contrastive (continual) pre-training loop.
//!
//! Each step encodes a shuffled batch with both towers, evaluates the
//! symmetric InfoNCE loss, clips the global gradient norm and applies AdamW
//! to the tensors left trainable by the freeze policy. Validation runs every
//! `val_every` steps and the parameters with the lowest validation loss are
//! returned.

pub mod adamw;
pub mod schedule;
pub mod step;

use std::time::Instant;

use ndarray::s;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use adamw::{adamw_update, global_grad_norm, AdamW, AdamWConfig};
pub use schedule::lr_schedule;
pub use step::{batch_loss, batch_loss_and_grad};

use crate::data::PreparedSplit;
use crate::loss::LossError;
use crate::model::{resolve_freeze, FreezeSpec, ModelError, ModelParameters, TrainableMask};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: usize, total_steps: usize },
    #[error("training loss diverged at step {step}")]
    DivergedLoss { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub freeze: FreezeSpec,
    pub seed: u64,
    pub val_every: usize,
    pub max_epochs: usize,
    /// Record wall-clock time per step. Off by default so logs are reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 4e-5,
            warmup_steps: 50,
            total_steps: 500,
            batch_size: 32,
            weight_decay: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-6,
            grad_clip: 1.0,
            freeze: FreezeSpec::default(),
            seed: 0,
            val_every: 50,
            max_epochs: 1000,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return fail(format!(
                "warmup_steps must satisfy 0 < warmup_steps ({}) < total_steps ({})",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2 (got {})", self.batch_size));
        }
        if self.val_every == 0 {
            return fail("val_every must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be >= 1".into());
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return fail(format!("peak_lr must be finite and >= 0 (got {})", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return fail("adam_eps must be > 0; weight_decay and grad_clip must be >= 0".into());
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr(&self, step: usize) -> Result<f64, TrainError> {
        lr_schedule(step, self.peak_lr, self.warmup_steps, self.total_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: Option<u64>,
    /// The update was skipped because the gradient was not finite.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParameters,
    /// `None` when the untrained parameters were never beaten.
    pub best_step: Option<usize>,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub last: ModelParameters,
    pub log: Vec<TrainLogEntry>,
    pub mask: TrainableMask,
}

/// Size-weighted InfoNCE over consecutive chunks of `batch_size`.
pub fn validation_loss(params: &ModelParameters, data: &PreparedSplit, batch_size: usize) -> Result<f64, TrainError> {
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let imgs = data.images.slice(s![start..end, .., .., ..]);
        let toks = data.tokens.slice(s![start..end, ..]);
        total += batch_loss(params, imgs, toks)? * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// SHA-256 over the frozen tensors (names and little-endian payloads).
pub fn frozen_checksum(params: &ModelParameters, mask: &TrainableMask) -> String {
    let mut h = Sha256::new();
    for ((name, t), trainable) in params.tensors().into_iter().zip(mask.flags()) {
        if trainable {
            continue;
        }
        h.update(name.as_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn clip_gradients(grads: &mut ModelParameters, mask: &TrainableMask, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = global_grad_norm(grads, mask);
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
}

/// Runs training. `on_validation(step, params, val_loss)` fires at every
/// validation point, e.g. to write a checkpoint.
pub fn train<F>(
    model: ModelParameters,
    train_data: &PreparedSplit,
    val_data: &PreparedSplit,
    config: &TrainConfig,
    mut on_validation: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(usize, &ModelParameters, f64) -> Result<(), TrainError>,
{
    config.validate()?;
    if val_data.is_empty() {
        return Err(TrainError::InvalidConfig("validation split is empty".into()));
    }
    if train_data.len() < config.batch_size {
        return Err(TrainError::InvalidConfig(format!(
            "train split has {} scenes, fewer than batch_size {}",
            train_data.len(),
            config.batch_size
        )));
    }
    let (c, h, w) = (train_data.images.dim().1, train_data.images.dim().2, train_data.images.dim().3);
    model.check_image_shape(c, h, w)?;

    let mask = resolve_freeze(&model, &config.freeze)?;
    let mut params = model;
    let mut opt = AdamW::new(&params, config.adamw());
    let initial_val_loss = validation_loss(&params, val_data, config.batch_size)?;
    let mut best = params.clone();
    let mut best_step = None;
    let mut best_val_loss = initial_val_loss;

    let steps_per_epoch = train_data.len() / config.batch_size;
    let total = config.total_steps.min(steps_per_epoch * config.max_epochs);
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = Vec::new();
    let mut bad_losses = 0;
    let started = Instant::now();

    for step in 0..total {
        let epoch = step / steps_per_epoch;
        let pos = step % steps_per_epoch;
        if pos == 0 {
            order = (0..train_data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
        }
        let idx = &order[pos * config.batch_size..(pos + 1) * config.batch_size];
        let (imgs, toks) = train_data.gather(idx);
        let lr = config.lr(step)?;
        let (loss, mut grads) = batch_loss_and_grad(&params, imgs.view(), toks.view())?;

        let mut skipped = false;
        if !loss.is_finite() {
            bad_losses += 1;
            if bad_losses >= 2 {
                return Err(TrainError::DivergedLoss { step });
            }
            skipped = true;
        } else {
            bad_losses = 0;
            if grads.is_finite() {
                clip_gradients(&mut grads, &mask, config.grad_clip);
                opt.step(&mut params, &grads, &mask, lr);
                params.clamp_log_temperature();
            } else {
                skipped = true;
            }
        }

        let validate_now = (step + 1) % config.val_every == 0 || step + 1 == total;
        let val_loss = if validate_now {
            let v = validation_loss(&params, val_data, config.batch_size)?;
            on_validation(step, &params, v)?;
            if v < best_val_loss {
                best_val_loss = v;
                best_step = Some(step);
                best = params.clone();
            }
            Some(v)
        } else {
            None
        };
        log.push(TrainLogEntry {
            step,
            epoch,
            lr,
            train_loss: loss,
            val_loss,
            wall_ms: config.record_wall_time.then(|| started.elapsed().as_millis() as u64),
            skipped,
        });
    }

    Ok(TrainOutcome {
        best,
        best_step,
        best_val_loss,
        initial_val_loss,
        last: params,
        log,
        mask,
    })
}
