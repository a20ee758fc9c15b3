//! Symmetric image-text InfoNCE.
//!
//! With unit-norm rows `x_i`, `y_i` and scale `s = exp(log_temperature) = 1/tau`:
//!
//! ```text
//! logits[i][j] = s * <x_i, y_j>
//! loss = -(1/2N) * sum_i [ log softmax_row(logits)[i][i] + log softmax_col(logits)[i][i] ]
//! ```
//!
//! Both log-softmaxes are evaluated with max subtraction.

use ndarray::{Array2, ArrayView2, Axis};
use thiserror::Error;

/// Tolerance on the unit-norm precondition.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("non-finite value in contrastive batch")]
    NonFiniteInput,
    #[error("batch shape error: {0}")]
    Shape(String),
    #[error("row {row} of the {side} embeddings has norm {norm}, expected 1")]
    NotUnitNorm { side: &'static str, row: usize, norm: f64 },
}

/// Matched image/text embeddings; row `i` of each side forms a positive pair.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch<'a> {
    pub image_embeddings: ArrayView2<'a, f64>,
    pub text_embeddings: ArrayView2<'a, f64>,
    pub log_temperature: f64,
}

impl<'a> ContrastiveBatch<'a> {
    pub fn new(
        image_embeddings: ArrayView2<'a, f64>,
        text_embeddings: ArrayView2<'a, f64>,
        log_temperature: f64,
    ) -> Result<Self, LossError> {
        let batch = Self {
            image_embeddings,
            text_embeddings,
            log_temperature,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let (x, y) = (&self.image_embeddings, &self.text_embeddings);
        if x.nrows() == 0 || x.dim() != y.dim() {
            return Err(LossError::Shape(format!(
                "image {:?} vs text {:?}",
                x.dim(),
                y.dim()
            )));
        }
        if !self.log_temperature.is_finite()
            || x.iter().chain(y.iter()).any(|v| !v.is_finite())
        {
            return Err(LossError::NonFiniteInput);
        }
        for (side, m) in [("image", x), ("text", y)] {
            for (row, r) in m.axis_iter(Axis(0)).enumerate() {
                let norm = r.dot(&r).sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(LossError::NotUnitNorm { side, row, norm });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.image_embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn logits(&self) -> Array2<f64> {
        let scale = self.log_temperature.exp();
        self.image_embeddings.dot(&self.text_embeddings.t()) * scale
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub image: Array2<f64>,
    pub text: Array2<f64>,
    pub log_temperature: f64,
}

/// Row-wise softmax and per-row log-sum-exp.
fn softmax_rows(m: ArrayView2<'_, f64>) -> (Array2<f64>, Vec<f64>) {
    let mut probs = m.to_owned();
    let mut lse = Vec::with_capacity(m.nrows());
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
        lse.push(max + sum.ln());
    }
    (probs, lse)
}

fn forward(batch: &ContrastiveBatch<'_>) -> (Array2<f64>, f64, Array2<f64>, Array2<f64>) {
    let logits = batch.logits();
    let n = logits.nrows();
    let (p_row, lse_row) = softmax_rows(logits.view());
    // column softmax of logits == row softmax of its transpose
    let (p_col_t, lse_col) = softmax_rows(logits.t());
    let mut total = 0.0;
    for i in 0..n {
        total += (logits[[i, i]] - lse_row[i]) + (logits[[i, i]] - lse_col[i]);
    }
    let loss = -total / (2.0 * n as f64);
    (logits, loss, p_row, p_col_t)
}

pub fn info_nce(batch: &ContrastiveBatch<'_>) -> Result<LossOutput, LossError> {
    batch.validate()?;
    let (logits, loss, _, _) = forward(batch);
    Ok(LossOutput { loss, logits })
}

/// Analytic gradients of [`info_nce`] with respect to both embedding matrices
/// and the log-temperature.
pub fn info_nce_backward(batch: &ContrastiveBatch<'_>) -> Result<LossGradients, LossError> {
    batch.validate()?;
    let (logits, loss, p_row, p_col_t) = forward(batch);
    let n = logits.nrows();
    let scale = batch.log_temperature.exp();
    // dL/dlogits[i][j] = (P_row[i][j] + P_col[i][j] - 2 delta_ij) / 2N
    let mut g = p_row + p_col_t.t();
    for i in 0..n {
        g[[i, i]] -= 2.0;
    }
    g /= 2.0 * n as f64;
    let log_temperature = (&g * &logits).sum();
    let image = g.dot(&batch.text_embeddings) * scale;
    let text = g.t().dot(&batch.image_embeddings) * scale;
    Ok(LossGradients {
        loss,
        image,
        text,
        log_temperature,
    })
}
