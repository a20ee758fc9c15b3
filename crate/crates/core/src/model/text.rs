//! Causal transformer text tower pooled at the EOS position.
//!
//! With a causal mask, positions after EOS cannot influence the EOS
//! representation, so each sequence is only evaluated up to and including EOS.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::layers::{
    l2_normalize, layer_norm, layer_norm_backward, transformer_backward, transformer_forward, BlockCache, LnCache,
};
use super::vision::stack_rows;
use super::{ModelError, ModelParameters};
use crate::tokenizer::{BOS, EOS};

pub(crate) struct TextCache {
    ids: Vec<u32>,
    blocks: Vec<BlockCache>,
    ln_final: LnCache,
    pooled: Array2<f32>,
}

impl ModelParameters {
    /// Checks one token row and returns the EOS position.
    pub(crate) fn check_tokens(&self, row: usize, ids: ArrayView1<'_, u32>) -> Result<usize, ModelError> {
        let cfg = &self.config;
        if ids.len() != cfg.context_length {
            return Err(ModelError::ShapeMismatch(format!(
                "token row {row} has length {}, model context is {}",
                ids.len(),
                cfg.context_length
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(ModelError::TokenOutOfRange { row, id });
        }
        if ids[0] != BOS {
            return Err(ModelError::MissingBos { row });
        }
        let mut eos = ids.iter().enumerate().filter(|(_, &id)| id == EOS).map(|(i, _)| i);
        match (eos.next(), eos.next()) {
            (Some(pos), None) => Ok(pos),
            _ => Err(ModelError::MissingEos { row }),
        }
    }

    /// Projected (unnormalized) text feature; `ids` runs from BOS through EOS.
    pub(crate) fn text_forward(&self, ids: &[u32]) -> (Array1<f32>, TextCache) {
        let cfg = &self.config;
        let t = &self.text;
        let n = ids.len();
        let mut x = Array2::zeros((n, cfg.text_dim));
        for (mut row, &id) in x.axis_iter_mut(Axis(0)).zip(ids) {
            row.assign(&t.token_embed.row(id as usize));
        }
        x += &t.pos_embed.slice(s![..n, ..]);
        let (x, blocks) = transformer_forward(x, &t.blocks, cfg.text_heads, true);
        let (pooled, ln_final) = layer_norm(x.slice(s![n - 1..n, ..]), &t.ln_final);
        let feature = pooled.row(0).dot(&self.text_proj);
        (
            feature,
            TextCache {
                ids: ids.to_vec(),
                blocks,
                ln_final,
                pooled,
            },
        )
    }

    pub(crate) fn text_backward(&self, cache: &TextCache, dfeature: ArrayView1<'_, f32>, g: &mut ModelParameters) {
        let cfg = &self.config;
        let t = &self.text;
        let n = cache.ids.len();
        for (i, &p) in cache.pooled.row(0).iter().enumerate() {
            g.text_proj.row_mut(i).scaled_add(p, &dfeature);
        }
        let dpooled = self.text_proj.dot(&dfeature).insert_axis(Axis(0));
        let deos = layer_norm_backward(dpooled.view(), &t.ln_final, &cache.ln_final, &mut g.text.ln_final);
        let mut dx = Array2::zeros((n, cfg.text_dim));
        dx.row_mut(n - 1).assign(&deos.row(0));
        let dx = transformer_backward(dx, &t.blocks, &cache.blocks, &mut g.text.blocks, cfg.text_heads);
        let mut gpos = g.text.pos_embed.slice_mut(s![..n, ..]);
        gpos += &dx;
        for (row, &id) in dx.axis_iter(Axis(0)).zip(&cache.ids) {
            let mut dst = g.text.token_embed.row_mut(id as usize);
            dst += &row;
        }
    }

    /// Unit-norm embeddings for an `N x context_length` token matrix.
    pub fn encode_text(&self, tokens: ArrayView2<'_, u32>) -> Result<Array2<f32>, ModelError> {
        let ends = tokens
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(r, row)| self.check_tokens(r, row))
            .collect::<Result<Vec<_>, _>>()?;
        let rows: Vec<Array1<f32>> = ends
            .par_iter()
            .enumerate()
            .map(|(r, &eos)| {
                let ids: Vec<u32> = tokens.row(r).iter().take(eos + 1).copied().collect();
                l2_normalize(self.text_forward(&ids).0.view()).0
            })
            .collect();
        Ok(stack_rows(&rows, self.config.proj_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer::PAD;
    use ndarray::array;

    fn cfg() -> ModelConfig {
        ModelConfig {
            image_size: 4,
            patch_size: 4,
            in_channels: 3,
            vision_dim: 4,
            vision_depth: 1,
            vision_heads: 1,
            text_dim: 8,
            text_depth: 2,
            text_heads: 2,
            vocab_size: 12,
            context_length: 6,
            proj_dim: 5,
            mlp_ratio: 2.0,
        }
    }

    #[test]
    fn unit_norm_rows_and_identical_prompts() {
        let p = init_model(&cfg(), 0).unwrap();
        let toks = array![[BOS, 5, 6, EOS, PAD, PAD], [BOS, 5, 6, EOS, PAD, PAD], [BOS, 7, EOS, PAD, PAD, PAD]];
        let e = p.encode_text(toks.view()).unwrap();
        for r in e.axis_iter(Axis(0)) {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-6);
        }
        assert_eq!(e.row(0), e.row(1));
        assert_ne!(e.row(0), e.row(2));
    }

    #[test]
    fn tokens_after_eos_are_ignored() {
        let p = init_model(&cfg(), 1).unwrap();
        let a = array![[BOS, 5, EOS, PAD, PAD, PAD]];
        let b = array![[BOS, 5, EOS, 9, 11, 4]];
        let ea = p.encode_text(a.view()).unwrap();
        let eb = p.encode_text(b.view()).unwrap();
        for (x, y) in ea.iter().zip(eb.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn token_errors() {
        let p = init_model(&cfg(), 0).unwrap();
        let no_eos = array![[BOS, 5, 6, 7, PAD, PAD]];
        assert!(matches!(p.encode_text(no_eos.view()), Err(ModelError::MissingEos { row: 0 })));
        let two_eos = array![[BOS, EOS, 6, EOS, PAD, PAD]];
        assert!(matches!(p.encode_text(two_eos.view()), Err(ModelError::MissingEos { row: 0 })));
        let oob = array![[BOS, 12, EOS, PAD, PAD, PAD]];
        assert!(matches!(p.encode_text(oob.view()), Err(ModelError::TokenOutOfRange { row: 0, id: 12 })));
        let short = array![[BOS, EOS]];
        assert!(matches!(p.encode_text(short.view()), Err(ModelError::ShapeMismatch(_))));
    }
}
