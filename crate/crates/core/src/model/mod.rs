//! Dual-encoder CLIP model: a ViT image tower with a channel-extensible patch
//! embedding, a causal transformer text tower, linear projections into a
//! shared space and a learnable log-temperature.
//!
//! Parameters live in typed structs; [`ModelParameters::tensors`] exposes them
//! as a stable, ordered list of named tensors used by checkpoints, freeze masks
//! and the optimizer.

pub mod checkpoint;
pub mod extend;
pub mod freeze;
mod layers;
pub mod text;
pub mod vision;

use ndarray::{Array0, Array1, Array2, Array4, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use layers::{l2_normalize as normalize_feature, l2_normalize_backward as normalize_feature_backward};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use extend::{extend_patch_embed, rgb_positions, InitMode};
pub use freeze::{resolve_freeze, FreezePolicy, FreezeSpec, TrainableMask};

pub const INIT_STD: f32 = 0.02;
/// Upper bound on `exp(log_temperature)`.
pub const MAX_LOGIT_SCALE: f32 = 100.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid RGB positions: {0}")]
    InvalidPositions(String),
    #[error("token row {row} has no single EOS token")]
    MissingEos { row: usize },
    #[error("token row {row} does not start with BOS")]
    MissingBos { row: usize },
    #[error("token id {id} in row {row} is outside the vocabulary")]
    TokenOutOfRange { row: usize, id: u32 },
    #[error("freeze pattern {0:?} matches no parameter")]
    UnknownPattern(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub vision_dim: usize,
    pub vision_depth: usize,
    pub vision_heads: usize,
    pub text_dim: usize,
    pub text_depth: usize,
    pub text_heads: usize,
    pub vocab_size: usize,
    pub context_length: usize,
    pub proj_dim: usize,
    pub mlp_ratio: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            in_channels: 3,
            vision_dim: 128,
            vision_depth: 4,
            vision_heads: 4,
            text_dim: 128,
            text_depth: 2,
            text_heads: 4,
            vocab_size: 4096,
            context_length: 77,
            proj_dim: 64,
            mlp_ratio: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.in_channels == 0 {
            return fail("in_channels must be >= 1".into());
        }
        for (name, dim, heads) in [
            ("vision", self.vision_dim, self.vision_heads),
            ("text", self.text_dim, self.text_heads),
        ] {
            if dim == 0 || heads == 0 || dim % heads != 0 {
                return fail(format!("{name}_dim {dim} must be divisible by {name}_heads {heads}"));
            }
        }
        if self.context_length < 2 {
            return fail("context_length must be >= 2 (BOS + EOS)".into());
        }
        if self.vocab_size < 4 {
            return fail("vocab_size must cover the 4 special tokens".into());
        }
        if self.proj_dim == 0 {
            return fail("proj_dim must be >= 1".into());
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return fail("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn vision_hidden(&self) -> usize {
        ((self.vision_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn text_hidden(&self) -> usize {
        ((self.text_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// `y = x W^T + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl LinearParams {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub weight: Array1<f32>,
    pub bias: Array1<f32>,
}

impl LayerNormParams {
    fn zeros(dim: usize) -> Self {
        Self {
            weight: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub q: LinearParams,
    pub k: LinearParams,
    pub v: LinearParams,
    pub out: LinearParams,
    pub ln2: LayerNormParams,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

impl BlockParams {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            ln1: LayerNormParams::zeros(dim),
            q: LinearParams::zeros(dim, dim),
            k: LinearParams::zeros(dim, dim),
            v: LinearParams::zeros(dim, dim),
            out: LinearParams::zeros(dim, dim),
            ln2: LayerNormParams::zeros(dim),
            fc1: LinearParams::zeros(dim, hidden),
            fc2: LinearParams::zeros(hidden, dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionParams {
    /// `(vision_dim, in_channels, patch_size, patch_size)`
    pub patch_weight: Array4<f32>,
    pub patch_bias: Array1<f32>,
    pub class_token: Array1<f32>,
    /// `(num_patches + 1, vision_dim)`
    pub pos_embed: Array2<f32>,
    pub blocks: Vec<BlockParams>,
    pub ln_post: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextParams {
    /// `(vocab_size, text_dim)`
    pub token_embed: Array2<f32>,
    /// `(context_length, text_dim)`
    pub pos_embed: Array2<f32>,
    pub blocks: Vec<BlockParams>,
    pub ln_final: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub vision: VisionParams,
    pub text: TextParams,
    /// `(vision_dim, proj_dim)`
    pub vision_proj: Array2<f32>,
    /// `(text_dim, proj_dim)`
    pub text_proj: Array2<f32>,
    /// `1/tau = exp(log_temperature)`
    pub log_temperature: Array0<f32>,
}

macro_rules! push_linear {
    ($out:ident, $name:expr, $p:expr, $view:ident) => {{
        let name = $name;
        $out.push((format!("{name}.weight"), $p.weight.$view().into_dyn()));
        $out.push((format!("{name}.bias"), $p.bias.$view().into_dyn()));
    }};
}

macro_rules! push_blocks {
    ($out:ident, $prefix:expr, $blocks:expr, $view:ident, $iter:ident) => {{
        for (i, b) in $blocks.$iter().enumerate() {
            let pre = format!("{}.blocks.{i}", $prefix);
            push_linear!($out, format!("{pre}.ln1"), b.ln1, $view);
            push_linear!($out, format!("{pre}.attn.q"), b.q, $view);
            push_linear!($out, format!("{pre}.attn.k"), b.k, $view);
            push_linear!($out, format!("{pre}.attn.v"), b.v, $view);
            push_linear!($out, format!("{pre}.attn.out"), b.out, $view);
            push_linear!($out, format!("{pre}.ln2"), b.ln2, $view);
            push_linear!($out, format!("{pre}.mlp.fc1"), b.fc1, $view);
            push_linear!($out, format!("{pre}.mlp.fc2"), b.fc2, $view);
        }
    }};
}

macro_rules! named_tensors {
    ($p:expr, $out:ident, $view:ident, $iter:ident) => {{
        $out.push(("patch_embed.weight".to_string(), $p.vision.patch_weight.$view().into_dyn()));
        $out.push(("patch_embed.bias".to_string(), $p.vision.patch_bias.$view().into_dyn()));
        $out.push(("vision.class_token".to_string(), $p.vision.class_token.$view().into_dyn()));
        $out.push(("vision.pos_embed".to_string(), $p.vision.pos_embed.$view().into_dyn()));
        push_blocks!($out, "vision", $p.vision.blocks, $view, $iter);
        push_linear!($out, "vision.ln_post", $p.vision.ln_post, $view);
        $out.push(("vision_proj".to_string(), $p.vision_proj.$view().into_dyn()));
        $out.push(("text.token_embed".to_string(), $p.text.token_embed.$view().into_dyn()));
        $out.push(("text.pos_embed".to_string(), $p.text.pos_embed.$view().into_dyn()));
        push_blocks!($out, "text", $p.text.blocks, $view, $iter);
        push_linear!($out, "text.ln_final", $p.text.ln_final, $view);
        $out.push(("text_proj".to_string(), $p.text_proj.$view().into_dyn()));
        $out.push(("log_temperature".to_string(), $p.log_temperature.$view().into_dyn()));
    }};
}

impl ModelParameters {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let vd = config.vision_dim;
        let td = config.text_dim;
        Ok(Self {
            config: config.clone(),
            vision: VisionParams {
                patch_weight: Array4::zeros((vd, config.in_channels, config.patch_size, config.patch_size)),
                patch_bias: Array1::zeros(vd),
                class_token: Array1::zeros(vd),
                pos_embed: Array2::zeros((config.num_patches() + 1, vd)),
                blocks: (0..config.vision_depth)
                    .map(|_| BlockParams::zeros(vd, config.vision_hidden()))
                    .collect(),
                ln_post: LayerNormParams::zeros(vd),
            },
            text: TextParams {
                token_embed: Array2::zeros((config.vocab_size, td)),
                pos_embed: Array2::zeros((config.context_length, td)),
                blocks: (0..config.text_depth)
                    .map(|_| BlockParams::zeros(td, config.text_hidden()))
                    .collect(),
                ln_final: LayerNormParams::zeros(td),
            },
            vision_proj: Array2::zeros((vd, config.proj_dim)),
            text_proj: Array2::zeros((td, config.proj_dim)),
            log_temperature: Array0::zeros(()),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f32>)> {
        let mut out = Vec::new();
        named_tensors!(self, out, view, iter);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f32>)> {
        let mut out = Vec::new();
        named_tensors!(self, out, view_mut, iter_mut);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn logit_scale(&self) -> f32 {
        self.log_temperature[()].exp()
    }

    pub fn clamp_log_temperature(&mut self) {
        let max = MAX_LOGIT_SCALE.ln();
        if self.log_temperature[()] > max {
            self.log_temperature[()] = max;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParameters) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

fn is_norm_or_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.contains(".ln")
}

/// Deterministic initialization: truncated normal (std 0.02, cut at 2 std)
/// for weights and embeddings, zero biases, unit layer-norm gains and
/// `log_temperature = ln(1/0.07)`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParameters, ModelError> {
    let mut params = ModelParameters::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
    for (name, mut t) in params.tensors_mut() {
        if name == "log_temperature" {
            t.fill((1.0f32 / 0.07).ln());
        } else if name.contains(".ln") && name.ends_with(".weight") {
            t.fill(1.0);
        } else if is_norm_or_bias(&name) {
            t.fill(0.0);
        } else {
            for v in t.iter_mut() {
                *v = loop {
                    let s = normal.sample(&mut rng);
                    if s.abs() <= 2.0 * INIT_STD {
                        break s;
                    }
                };
            }
        }
    }
    Ok(params)
}

/// Whether AdamW applies weight decay to this tensor.
pub fn decays(name: &str, ndim: usize) -> bool {
    ndim >= 2 && !is_norm_or_bias(name) && name != "log_temperature"
}
