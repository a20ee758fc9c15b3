//! Forward and backward kernels shared by both towers. Every forward returns
//! the activations its backward needs; gradients accumulate into a
//! parameter-shaped buffer.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{BlockParams, LayerNormParams, LinearParams};

const LN_EPS: f32 = 1e-5;
const GELU_K: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_C: f32 = 0.044_715;

pub(crate) fn linear(x: ArrayView2<'_, f32>, p: &LinearParams) -> Array2<f32> {
    let mut y = x.dot(&p.weight.t());
    y += &p.bias;
    y
}

pub(crate) fn linear_backward(
    x: ArrayView2<'_, f32>,
    p: &LinearParams,
    dy: ArrayView2<'_, f32>,
    g: &mut LinearParams,
) -> Array2<f32> {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut g.weight);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&p.weight)
}

pub(crate) struct LnCache {
    xhat: Array2<f32>,
    rstd: Array1<f32>,
}

pub(crate) fn layer_norm(x: ArrayView2<'_, f32>, p: &LayerNormParams) -> (Array2<f32>, LnCache) {
    let d = x.ncols() as f32;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f32>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let inv = *r;
        row.mapv_inplace(|v| v * inv);
    }
    let mut y = &xhat * &p.weight;
    y += &p.bias;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: ArrayView2<'_, f32>,
    p: &LayerNormParams,
    cache: &LnCache,
    g: &mut LayerNormParams,
) -> Array2<f32> {
    g.weight += &(&dy * &cache.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f32;
    let mut dx = &dy * &p.weight;
    for ((mut row, xh), &r) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.rstd.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xh) / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - mean_g - x * mean_gx));
    }
    dx
}

#[inline]
fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f32) -> f32 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) struct AttnCache {
    input: Array2<f32>,
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    probs: Vec<Array2<f32>>,
    context: Array2<f32>,
}

fn softmax_rows_inplace(m: &mut Array2<f32>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn attention(
    x: Array2<f32>,
    p: &BlockParams,
    heads: usize,
    causal: bool,
) -> (Array2<f32>, AttnCache) {
    let (t, d) = x.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let q = linear(x.view(), &p.q);
    let k = linear(x.view(), &p.k);
    let v = linear(x.view(), &p.v);
    let mut context = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        if causal {
            for i in 0..t {
                for j in (i + 1)..t {
                    scores[[i, j]] = f32::NEG_INFINITY;
                }
            }
        }
        softmax_rows_inplace(&mut scores);
        context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let out = linear(context.view(), &p.out);
    (
        out,
        AttnCache {
            input: x,
            q,
            k,
            v,
            probs,
            context,
        },
    )
}

pub(crate) fn attention_backward(
    dout: ArrayView2<'_, f32>,
    p: &BlockParams,
    cache: &AttnCache,
    g: &mut BlockParams,
    heads: usize,
) -> Array2<f32> {
    let (t, d) = cache.q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let dcontext = linear_backward(cache.context.view(), &p.out, dout, &mut g.out);
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for (h, a) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx = dcontext.slice(cols);
        dv.slice_mut(cols).assign(&a.t().dot(&dctx));
        let da = dctx.dot(&cache.v.slice(cols).t());
        // softmax backward: dS = A * (dA - rowsum(dA * A))
        let mut ds = &da * a;
        for (mut row, arow) in ds.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))) {
            let dot: f32 = row.sum();
            row.zip_mut_with(&arow, |v, &pa| *v -= pa * dot);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let x = cache.input.view();
    let mut dx = linear_backward(x, &p.q, dq.view(), &mut g.q);
    dx += &linear_backward(x, &p.k, dk.view(), &mut g.k);
    dx += &linear_backward(x, &p.v, dv.view(), &mut g.v);
    dx
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    h2: Array2<f32>,
    pre_act: Array2<f32>,
    act: Array2<f32>,
}

pub(crate) fn block_forward(
    x: Array2<f32>,
    p: &BlockParams,
    heads: usize,
    causal: bool,
) -> (Array2<f32>, BlockCache) {
    let (h1, ln1) = layer_norm(x.view(), &p.ln1);
    let (attn_out, attn) = attention(h1, p, heads, causal);
    let x1 = x + &attn_out;
    let (h2, ln2) = layer_norm(x1.view(), &p.ln2);
    let pre_act = linear(h2.view(), &p.fc1);
    let act = pre_act.mapv(gelu);
    let mlp = linear(act.view(), &p.fc2);
    let x2 = x1 + &mlp;
    (
        x2,
        BlockCache {
            ln1,
            attn,
            ln2,
            h2,
            pre_act,
            act,
        },
    )
}

pub(crate) fn block_backward(
    dy: Array2<f32>,
    p: &BlockParams,
    cache: &BlockCache,
    g: &mut BlockParams,
    heads: usize,
) -> Array2<f32> {
    let dact = linear_backward(cache.act.view(), &p.fc2, dy.view(), &mut g.fc2);
    let mut dpre = dact;
    dpre.zip_mut_with(&cache.pre_act, |d, &x| *d *= gelu_grad(x));
    let dh2 = linear_backward(cache.h2.view(), &p.fc1, dpre.view(), &mut g.fc1);
    let mut dx1 = dy;
    dx1 += &layer_norm_backward(dh2.view(), &p.ln2, &cache.ln2, &mut g.ln2);
    let dh1 = attention_backward(dx1.view(), p, &cache.attn, g, heads);
    let mut dx = dx1;
    dx += &layer_norm_backward(dh1.view(), &p.ln1, &cache.ln1, &mut g.ln1);
    dx
}

pub(crate) fn transformer_forward(
    mut x: Array2<f32>,
    blocks: &[BlockParams],
    heads: usize,
    causal: bool,
) -> (Array2<f32>, Vec<BlockCache>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (y, c) = block_forward(x, b, heads, causal);
        caches.push(c);
        x = y;
    }
    (x, caches)
}

pub(crate) fn transformer_backward(
    mut dy: Array2<f32>,
    blocks: &[BlockParams],
    caches: &[BlockCache],
    grads: &mut [BlockParams],
    heads: usize,
) -> Array2<f32> {
    for ((b, c), g) in blocks.iter().zip(caches).zip(grads.iter_mut()).rev() {
        dy = block_backward(dy, b, c, g, heads);
    }
    dy
}

/// Returns `u / |u|` and `|u|`.
pub(crate) fn l2_normalize(u: ArrayView1<'_, f32>) -> (Array1<f32>, f32) {
    let norm = u.dot(&u).sqrt().max(1e-12);
    (u.mapv(|v| v / norm), norm)
}

/// Backward of `e = u / |u|`: `du = (de - e <e, de>) / |u|`.
pub(crate) fn l2_normalize_backward(e: ArrayView1<'_, f32>, norm: f32, de: ArrayView1<'_, f32>) -> Array1<f32> {
    let dot = e.dot(&de);
    let mut du = de.to_owned();
    du.zip_mut_with(&e, |d, &ev| *d = (*d - ev * dot) / norm);
    du
}
