//! Whole-model contrastive loss and its gradient for one batch.

use ndarray::{Array1, Array2, ArrayView2, ArrayView4, Axis};
use rayon::prelude::*;

use super::TrainError;
use crate::loss::{info_nce, info_nce_backward, ContrastiveBatch};
use crate::model::ModelParameters;

/// Samples per gradient-accumulation chunk. Chunks are reduced in index
/// order, so results do not depend on the thread count.
const CHUNK: usize = 8;

fn check_batch(params: &ModelParameters, images: &ArrayView4<'_, f32>, tokens: &ArrayView2<'_, u32>) -> Result<Vec<usize>, TrainError> {
    let (n, c, h, w) = images.dim();
    params.check_image_shape(c, h, w)?;
    if tokens.nrows() != n {
        return Err(TrainError::InvalidConfig(format!("{n} images but {} token rows", tokens.nrows())));
    }
    Ok(tokens
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(r, row)| params.check_tokens(r, row))
        .collect::<Result<_, _>>()?)
}

fn eos_ids(tokens: &ArrayView2<'_, u32>, r: usize, eos: usize) -> Vec<u32> {
    tokens.row(r).iter().take(eos + 1).copied().collect()
}

fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn to_f64(rows: &[Array1<f32>]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&src.mapv(f64::from));
    }
    out
}

/// InfoNCE of the model on one matched batch; NaN if an embedding is not finite.
pub fn batch_loss(params: &ModelParameters, images: ArrayView4<'_, f32>, tokens: ArrayView2<'_, u32>) -> Result<f64, TrainError> {
    check_batch(params, &images, &tokens)?;
    let x = params.encode_image(images)?.mapv(f64::from);
    let y = params.encode_text(tokens)?.mapv(f64::from);
    if !(all_finite(&x) && all_finite(&y)) {
        return Ok(f64::NAN);
    }
    let batch = ContrastiveBatch::new(x.view(), y.view(), params.log_temperature[()] as f64)?;
    Ok(info_nce(&batch)?.loss)
}

/// Loss and gradients with respect to every parameter tensor.
pub fn batch_loss_and_grad(
    params: &ModelParameters,
    images: ArrayView4<'_, f32>,
    tokens: ArrayView2<'_, u32>,
) -> Result<(f64, ModelParameters), TrainError> {
    let ends = check_batch(params, &images, &tokens)?;
    let n = ends.len();

    let forward: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (fi, ci) = params.image_forward(images.index_axis(Axis(0), i));
            let (ft, ct) = params.text_forward(&eos_ids(&tokens, i, ends[i]));
            let (ei, ni) = crate::model::normalize_feature(fi.view());
            let (et, nt) = crate::model::normalize_feature(ft.view());
            (ei, ni, ci, et, nt, ct)
        })
        .collect();
    let img: Vec<Array1<f32>> = forward.iter().map(|f| f.0.clone()).collect();
    let txt: Vec<Array1<f32>> = forward.iter().map(|f| f.3.clone()).collect();
    let (x, y) = (to_f64(&img), to_f64(&txt));
    let lt = params.log_temperature[()] as f64;
    if !(all_finite(&x) && all_finite(&y) && lt.is_finite()) {
        return Ok((f64::NAN, params.zeros_like()));
    }
    let grads = info_nce_backward(&ContrastiveBatch::new(x.view(), y.view(), lt)?)?;
    if !grads.loss.is_finite() {
        return Ok((grads.loss, params.zeros_like()));
    }

    let partials: Vec<ModelParameters> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = params.zeros_like();
            for (i, (ei, ni, ci, et, nt, ct)) in forward.iter().enumerate().skip(c * CHUNK).take(CHUNK) {
                let dei = grads.image.row(i).mapv(|v| v as f32);
                let dfi = crate::model::normalize_feature_backward(ei.view(), *ni, dei.view());
                params.image_backward(ci, dfi.view(), &mut g);
                let det = grads.text.row(i).mapv(|v| v as f32);
                let dft = crate::model::normalize_feature_backward(et.view(), *nt, det.view());
                params.text_backward(ct, dft.view(), &mut g);
            }
            g
        })
        .collect();
    let mut total = params.zeros_like();
    for g in &partials {
        total.add_assign(g);
    }
    total.log_temperature[()] = grads.log_temperature as f32;
    Ok((grads.loss, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer::{BOS, EOS, PAD};
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (ModelParameters, Array4<f32>, Array2<u32>) {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 4,
            vision_dim: 8,
            vision_depth: 1,
            vision_heads: 2,
            text_dim: 8,
            text_depth: 1,
            text_heads: 2,
            vocab_size: 12,
            context_length: 6,
            proj_dim: 6,
            mlp_ratio: 2.0,
            ..ModelConfig::default()
        };
        let mut p = init_model(&cfg, 3).unwrap();
        // larger weights make the gradient signal well above f32 noise
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (name, mut t) in p.tensors_mut() {
            if name != "log_temperature" {
                t.mapv_inplace(|v| v * 10.0 + rng.random_range(-0.1..0.1));
            }
        }
        p.log_temperature.fill(1.0);
        let imgs = Array4::from_shape_fn((n, 3, 8, 8), |_| rng.random_range(-1.0..1.0));
        let mut toks = Array2::from_elem((n, 6), PAD);
        for i in 0..n {
            toks[[i, 0]] = BOS;
            let len = 1 + i % 3;
            for j in 1..=len {
                toks[[i, j]] = rng.random_range(4..12);
            }
            toks[[i, len + 1]] = EOS;
        }
        (p, imgs, toks)
    }

    #[test]
    fn loss_matches_encoder_path() {
        let (p, imgs, toks) = setup(5);
        let (l, _) = batch_loss_and_grad(&p, imgs.view(), toks.view()).unwrap();
        let l2 = batch_loss(&p, imgs.view(), toks.view()).unwrap();
        assert!((l - l2).abs() < 1e-6);
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let (p, imgs, toks) = setup(4);
        let (_, g) = batch_loss_and_grad(&p, imgs.view(), toks.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let mut dir = p.zeros_like();
            for (_, mut t) in dir.tensors_mut() {
                t.mapv_inplace(|_| rng.random_range(-1.0f32..1.0));
            }
            let analytic: f64 = g
                .tensors()
                .iter()
                .zip(dir.tensors())
                .map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (*x as f64) * (*y as f64)).sum::<f64>())
                .sum();
            let h = 1e-3f32;
            let shifted = |sign: f32| {
                let mut q = p.clone();
                let mut d = dir.clone();
                d.scale(sign * h);
                q.add_assign(&d);
                batch_loss(&q, imgs.view(), toks.view()).unwrap()
            };
            let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h as f64);
            let rel = (numeric - analytic).abs() / analytic.abs().max(1e-3);
            assert!(rel < 2e-2, "numeric {numeric} analytic {analytic}");
        }
    }

    #[test]
    fn single_pair_has_zero_gradient() {
        let (p, imgs, toks) = setup(1);
        let (l, g) = batch_loss_and_grad(&p, imgs.view(), toks.view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn mismatched_rows_rejected() {
        let (p, imgs, toks) = setup(3);
        let short = toks.slice(ndarray::s![..2, ..]);
        assert!(batch_loss_and_grad(&p, imgs.view(), short).is_err());
    }
}
