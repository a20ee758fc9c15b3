//! AdamW with decoupled weight decay and bias correction.
//!
//! Moments are kept in f64; parameters stay f32.

use serde::{Deserialize, Serialize};

use crate::model::{decays, ModelParameters, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.2,
        }
    }
}

/// One AdamW update of a flat tensor at 1-based step `t`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i] as f64;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        let mut p = param[i] as f64;
        if decay {
            p -= lr * cfg.weight_decay * p;
        }
        p -= lr * mhat / (vhat.sqrt() + cfg.eps);
        param[i] = p as f32;
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParameters, config: AdamWConfig) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable tensor; frozen tensors and their moments are untouched.
    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, mask: &TrainableMask, lr: f64) {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let grads = grads.tensors();
        for (i, ((name, mut p), trainable)) in params.tensors_mut().into_iter().zip(mask.flags()).enumerate() {
            if !trainable {
                continue;
            }
            let decay = decays(&name, p.ndim());
            let g = grads[i].1.as_standard_layout();
            let p = p.as_slice_mut().expect("parameters are contiguous");
            adamw_update(p, g.as_slice().unwrap(), &mut self.m[i], &mut self.v[i], t, lr, &cfg, decay);
        }
    }
}

/// Global L2 norm over trainable gradients.
pub fn global_grad_norm(grads: &ModelParameters, mask: &TrainableMask) -> f64 {
    grads
        .tensors()
        .iter()
        .zip(mask.flags())
        .filter(|(_, t)| *t)
        .map(|((_, g), _)| g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
