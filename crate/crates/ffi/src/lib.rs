//! C interface to the msclip encoders, loss and metrics.
//!
//! Every function returns an [`MsclipStatus`]. On failure the message is
//! available from [`msclip_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Output buffers are caller-allocated; their lengths are checked.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use msclip::corpus::meteor_simplified;
use msclip::data::parse_band_list;
use msclip::eval::{average_precision_at_k, multilabel_eq2, multilabel_negative_class};
use msclip::loss::{info_nce, ContrastiveBatch};
use msclip::model::{extend_patch_embed, load_checkpoint, rgb_positions, save_checkpoint, InitMode, ModelParameters};
use msclip::tokenizer::Vocabulary;
use msclip::trainer::lr_schedule;
use ndarray::{ArrayView1, ArrayView2, ArrayView4};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsclipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsclipInitMode {
    Zero = 0,
    MeanRgb = 1,
}

/// Model parameters loaded from a checkpoint.
pub struct MsclipModel {
    params: ModelParameters,
}

/// Token vocabulary loaded from a `vocab.txt` file.
pub struct MsclipVocab {
    vocab: Vocabulary,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsclipModelInfo {
    pub in_channels: usize,
    pub image_size: usize,
    pub proj_dim: usize,
    pub context_length: usize,
    pub vocab_size: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MsclipStatus, String);

type FfiResult = Result<(), Failure>;

fn fail(status: MsclipStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    fail(MsclipStatus::InvalidArgument, e.to_string())
}

fn set_error(msg: Option<String>) {
    LAST_ERROR.with(|c| *c.borrow_mut() = msg.map(|m| CString::new(m.replace('\0', " ")).unwrap_or_default()));
}

fn guard(f: impl FnOnce() -> FfiResult) -> MsclipStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            MsclipStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("internal panic".into()));
            MsclipStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MsclipStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(MsclipStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MsclipStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(fail(
            MsclipStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(MsclipStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> FfiResult {
    if p.is_null() {
        return Err(fail(MsclipStatus::NullPointer, format!("{what} is null")));
    }
    p.write(v);
    Ok(())
}

fn io_or_invalid(e: msclip::model::ModelError) -> Failure {
    match e {
        msclip::model::ModelError::Io { .. } | msclip::model::ModelError::Checkpoint(_) => {
            fail(MsclipStatus::Io, e.to_string())
        }
        other => invalid(other),
    }
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn msclip_last_error() -> *const c_char {
    LAST_ERROR.with(|c| c.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn msclip_model_load(path: *const c_char, out: *mut *mut MsclipModel) -> MsclipStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let params = load_checkpoint(Path::new(path)).map_err(io_or_invalid)?;
        write_out(out, Box::into_raw(Box::new(MsclipModel { params })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn msclip_model_save(model: *const MsclipModel, path: *const c_char) -> MsclipStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let path = str_arg(path, "path")?;
        save_checkpoint(&model.params, Path::new(path)).map_err(io_or_invalid)
    })
}

#[no_mangle]
pub unsafe extern "C" fn msclip_model_free(model: *mut MsclipModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn msclip_model_info(model: *const MsclipModel, out: *mut MsclipModelInfo) -> MsclipStatus {
    guard(|| {
        let c = &ref_arg(model, "model")?.params.config;
        let info = MsclipModelInfo {
            in_channels: c.in_channels,
            image_size: c.image_size,
            proj_dim: c.proj_dim,
            context_length: c.context_length,
            vocab_size: c.vocab_size,
        };
        write_out(out, info, "out")
    })
}

/// Widens a 3-channel model to `bands` (e.g. "10" or "B2,B3,B4,B8").
/// The result is a new handle; `model` is unchanged.
#[no_mangle]
pub unsafe extern "C" fn msclip_model_extend(
    model: *const MsclipModel,
    bands: *const c_char,
    mode: MsclipInitMode,
    out: *mut *mut MsclipModel,
) -> MsclipStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let bands = parse_band_list(str_arg(bands, "bands")?).map_err(invalid)?;
        let mode = match mode {
            MsclipInitMode::Zero => InitMode::ZeroInit,
            MsclipInitMode::MeanRgb => InitMode::MeanRgbInit,
        };
        let rgb = rgb_positions(&bands).map_err(invalid)?;
        let params = extend_patch_embed(&model.params, &bands, rgb, mode).map_err(invalid)?;
        write_out(out, Box::into_raw(Box::new(MsclipModel { params })), "out")
    })
}

/// Encodes `n` preprocessed images laid out as `n x c x h x w` floats into
/// `n x proj_dim` unit vectors.
#[no_mangle]
pub unsafe extern "C" fn msclip_encode_image(
    model: *const MsclipModel,
    pixels: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f32,
    out_len: usize,
) -> MsclipStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        let len = n.checked_mul(c).and_then(|v| v.checked_mul(h)).and_then(|v| v.checked_mul(w));
        let len = len.ok_or_else(|| invalid("image dimensions overflow"))?;
        let data = slice_arg(pixels, len, "pixels")?;
        let view = ArrayView4::from_shape((n, c, h, w), data).map_err(invalid)?;
        let emb = model.params.encode_image(view).map_err(invalid)?;
        let dst = out_slice(out, out_len, emb.len(), "out")?;
        dst.iter_mut().zip(emb.iter()).for_each(|(d, s)| *d = *s);
        Ok(())
    })
}

/// Encodes `n` token rows of `context_length` ids into `n x proj_dim` unit vectors.
#[no_mangle]
pub unsafe extern "C" fn msclip_encode_text(
    model: *const MsclipModel,
    tokens: *const u32,
    n: usize,
    context_length: usize,
    out: *mut f32,
    out_len: usize,
) -> MsclipStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        let len = n.checked_mul(context_length).ok_or_else(|| invalid("token dimensions overflow"))?;
        let data = slice_arg(tokens, len, "tokens")?;
        let view = ArrayView2::from_shape((n, context_length), data).map_err(invalid)?;
        let emb = model.params.encode_text(view).map_err(invalid)?;
        let dst = out_slice(out, out_len, emb.len(), "out")?;
        dst.iter_mut().zip(emb.iter()).for_each(|(d, s)| *d = *s);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn msclip_vocab_load(path: *const c_char, out: *mut *mut MsclipVocab) -> MsclipStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let vocab = Vocabulary::load(Path::new(path)).map_err(|e| fail(MsclipStatus::Io, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(MsclipVocab { vocab })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn msclip_vocab_free(vocab: *mut MsclipVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Tokenizes `text` into exactly `context_length` ids written to `out`.
#[no_mangle]
pub unsafe extern "C" fn msclip_vocab_encode(
    vocab: *const MsclipVocab,
    text: *const c_char,
    context_length: usize,
    out: *mut u32,
    out_len: usize,
) -> MsclipStatus {
    guard(|| {
        let vocab = ref_arg(vocab, "vocab")?;
        let text = str_arg(text, "text")?;
        if context_length < 2 {
            return Err(invalid("context_length must be >= 2"));
        }
        let ids = vocab.vocab.encode(text, context_length);
        out_slice(out, out_len, ids.len(), "out")?.copy_from_slice(&ids);
        Ok(())
    })
}

/// Symmetric contrastive loss of two row-matched `n x d` embedding matrices.
#[no_mangle]
pub unsafe extern "C" fn msclip_info_nce(
    image: *const f64,
    text: *const f64,
    n: usize,
    d: usize,
    log_temperature: f64,
    out_loss: *mut f64,
) -> MsclipStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| invalid("dimensions overflow"))?;
        let x = ArrayView2::from_shape((n, d), slice_arg(image, len, "image")?).map_err(invalid)?;
        let y = ArrayView2::from_shape((n, d), slice_arg(text, len, "text")?).map_err(invalid)?;
        let batch = ContrastiveBatch::new(x, y, log_temperature).map_err(invalid)?;
        let loss = info_nce(&batch).map_err(invalid)?.loss;
        write_out(out_loss, loss, "out_loss")
    })
}

/// Average precision over the first `k` entries of `ranking` given the
/// relevant item ids.
#[no_mangle]
pub unsafe extern "C" fn msclip_average_precision_at_k(
    ranking: *const usize,
    ranking_len: usize,
    relevant: *const usize,
    relevant_len: usize,
    k: usize,
    out_ap: *mut f64,
) -> MsclipStatus {
    guard(|| {
        let ranking = slice_arg(ranking, ranking_len, "ranking")?;
        let relevant: HashSet<usize> = slice_arg(relevant, relevant_len, "relevant")?.iter().copied().collect();
        let ap = average_precision_at_k(ranking, &relevant, k).map_err(invalid)?.ap;
        write_out(out_ap, ap, "out_ap")
    })
}

/// Multilabel decision per class: 1 where a class's similarity beats the
/// mean of the others.
#[no_mangle]
pub unsafe extern "C" fn msclip_multilabel_eq2(sims: *const f64, k: usize, out: *mut u8, out_len: usize) -> MsclipStatus {
    guard(|| {
        let sims = slice_arg(sims, k, "sims")?;
        let flags = multilabel_eq2(ArrayView1::from(sims));
        let dst = out_slice(out, out_len, flags.len(), "out")?;
        dst.iter_mut().zip(&flags).for_each(|(d, f)| *d = u8::from(*f));
        Ok(())
    })
}

/// Multilabel decision per class: 1 where a class's similarity beats the
/// negative-prompt similarity.
#[no_mangle]
pub unsafe extern "C" fn msclip_multilabel_negative_class(
    sims: *const f64,
    k: usize,
    negative: f64,
    out: *mut u8,
    out_len: usize,
) -> MsclipStatus {
    guard(|| {
        let sims = slice_arg(sims, k, "sims")?;
        let flags = multilabel_negative_class(ArrayView1::from(sims), negative);
        let dst = out_slice(out, out_len, flags.len(), "out")?;
        dst.iter_mut().zip(&flags).for_each(|(d, f)| *d = u8::from(*f));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn msclip_meteor(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> MsclipStatus {
    guard(|| {
        let c = str_arg(candidate, "candidate")?;
        let r = str_arg(reference, "reference")?;
        let score = meteor_simplified(c, r).map_err(invalid)?;
        write_out(out, score, "out")
    })
}

/// Learning rate at a 0-based step: linear warm-up then cosine decay to zero.
#[no_mangle]
pub unsafe extern "C" fn msclip_lr_schedule(
    step: usize,
    peak_lr: f64,
    warmup_steps: usize,
    total_steps: usize,
    out: *mut f64,
) -> MsclipStatus {
    guard(|| {
        let lr = lr_schedule(step, peak_lr, warmup_steps, total_steps).map_err(invalid)?;
        write_out(out, lr, "out")
    })
}
