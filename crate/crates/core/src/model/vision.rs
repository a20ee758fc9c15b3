//! ViT image tower.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;

use super::layers::{
    l2_normalize, layer_norm, layer_norm_backward, transformer_backward, transformer_forward, BlockCache, LnCache,
};
use super::{ModelError, ModelParameters};

/// Flattens non-overlapping patches to rows of length `C * p * p`
/// (channel-major, then row, then column).
pub(crate) fn patchify(img: ArrayView3<'_, f32>, patch: usize) -> Array2<f32> {
    let (c, h, w) = img.dim();
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Array2::zeros((ph * pw, c * patch * patch));
    for py in 0..ph {
        for px in 0..pw {
            let mut row = out.row_mut(py * pw + px);
            let mut i = 0;
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        row[i] = img[[ch, py * patch + dy, px * patch + dx]];
                        i += 1;
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct VisionCache {
    patches: Array2<f32>,
    blocks: Vec<BlockCache>,
    ln_post: LnCache,
    pooled: Array2<f32>,
}

impl ModelParameters {
    fn patch_matrix(&self) -> ndarray::ArrayView2<'_, f32> {
        let w = &self.vision.patch_weight;
        let d = w.shape()[0];
        let k = w.len() / d;
        w.view().into_shape_with_order((d, k)).expect("contiguous patch weight")
    }

    pub(crate) fn check_image_shape(&self, c: usize, h: usize, w: usize) -> Result<(), ModelError> {
        let cfg = &self.config;
        if c != cfg.in_channels || h != cfg.image_size || w != cfg.image_size {
            return Err(ModelError::ShapeMismatch(format!(
                "image is {c}x{h}x{w}, model expects {}x{}x{}",
                cfg.in_channels, cfg.image_size, cfg.image_size
            )));
        }
        Ok(())
    }

    /// Projected (unnormalized) image feature for one `C x H x W` input.
    pub(crate) fn image_forward(&self, img: ArrayView3<'_, f32>) -> (Array1<f32>, VisionCache) {
        let cfg = &self.config;
        let v = &self.vision;
        let patches = patchify(img, cfg.patch_size);
        let mut tokens = patches.dot(&self.patch_matrix().t());
        tokens += &v.patch_bias;
        let n = tokens.nrows();
        let mut x = Array2::zeros((n + 1, cfg.vision_dim));
        x.row_mut(0).assign(&v.class_token);
        x.slice_mut(s![1.., ..]).assign(&tokens);
        x += &v.pos_embed;
        let (x, blocks) = transformer_forward(x, &v.blocks, cfg.vision_heads, false);
        let (pooled, ln_post) = layer_norm(x.slice(s![0..1, ..]), &v.ln_post);
        let feature = pooled.row(0).dot(&self.vision_proj);
        (
            feature,
            VisionCache {
                patches,
                blocks,
                ln_post,
                pooled,
            },
        )
    }

    /// Accumulates parameter gradients given `d feature`.
    pub(crate) fn image_backward(&self, cache: &VisionCache, dfeature: ArrayView1<'_, f32>, g: &mut ModelParameters) {
        let cfg = &self.config;
        let v = &self.vision;
        let pooled = cache.pooled.row(0);
        for (i, &p) in pooled.iter().enumerate() {
            g.vision_proj.row_mut(i).scaled_add(p, &dfeature);
        }
        let dpooled = self.vision_proj.dot(&dfeature).insert_axis(Axis(0));
        let dcls = layer_norm_backward(dpooled.view(), &v.ln_post, &cache.ln_post, &mut g.vision.ln_post);
        let mut dx = Array2::zeros((cache.patches.nrows() + 1, cfg.vision_dim));
        dx.row_mut(0).assign(&dcls.row(0));
        let dx = transformer_backward(dx, &v.blocks, &cache.blocks, &mut g.vision.blocks, cfg.vision_heads);
        g.vision.pos_embed += &dx;
        g.vision.class_token += &dx.row(0);
        let dtokens = dx.slice(s![1.., ..]);
        g.vision.patch_bias += &dtokens.sum_axis(Axis(0));
        let d = g.vision.patch_weight.shape()[0];
        let k = g.vision.patch_weight.len() / d;
        let mut gw = g
            .vision
            .patch_weight
            .view_mut()
            .into_shape_with_order((d, k))
            .expect("contiguous patch weight");
        ndarray::linalg::general_mat_mul(1.0, &dtokens.t(), &cache.patches, 1.0, &mut gw);
    }

    /// Unit-norm embeddings for a normalized `N x C x H x W` batch.
    pub fn encode_image(&self, batch: ArrayView4<'_, f32>) -> Result<Array2<f32>, ModelError> {
        let (_, c, h, w) = batch.dim();
        self.check_image_shape(c, h, w)?;
        let rows: Vec<Array1<f32>> = (0..batch.len_of(Axis(0)))
            .into_par_iter()
            .map(|i| l2_normalize(self.image_forward(batch.index_axis(Axis(0), i)).0.view()).0)
            .collect();
        Ok(stack_rows(&rows, self.config.proj_dim))
    }
}

pub(crate) fn stack_rows(rows: &[Array1<f32>], dim: usize) -> Array2<f32> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(src);
    }
    out
}
