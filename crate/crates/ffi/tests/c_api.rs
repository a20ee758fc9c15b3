use std::ffi::{CStr, CString};
use std::ptr;

use msclip::model::{init_model, save_checkpoint, ModelConfig, ModelParameters};
use msclip::tokenizer::Vocabulary;
use msclip_ffi::*;
use ndarray::{Array2, Array4};

fn tiny() -> ModelParameters {
    let cfg = ModelConfig {
        image_size: 8,
        patch_size: 4,
        vision_dim: 8,
        vision_depth: 1,
        vision_heads: 2,
        text_dim: 8,
        text_depth: 1,
        text_heads: 2,
        vocab_size: 10,
        context_length: 6,
        proj_dim: 4,
        mlp_ratio: 2.0,
        ..ModelConfig::default()
    };
    init_model(&cfg, 5).unwrap()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = msclip_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Loaded {
    _dir: tempfile::TempDir,
    params: ModelParameters,
    handle: *mut MsclipModel,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { msclip_model_free(self.handle) };
    }
}

fn load() -> Loaded {
    let dir = tempfile::tempdir().unwrap();
    let params = tiny();
    let path = dir.path().join("m.msck");
    save_checkpoint(&params, &path).unwrap();
    let mut handle = ptr::null_mut();
    let st = unsafe { msclip_model_load(cstr(&path).as_ptr(), &mut handle) };
    assert_eq!(st, MsclipStatus::Ok);
    Loaded { _dir: dir, params, handle }
}

#[test]
fn image_embeddings_match_library() {
    let m = load();
    let imgs = Array4::from_shape_fn((3, 3, 8, 8), |(n, c, y, x)| ((n * 7 + c * 3 + y + 2 * x) as f32).sin());
    let mut out = vec![0f32; 3 * 4];
    let st = unsafe {
        msclip_encode_image(m.handle, imgs.as_ptr(), 3, 3, 8, 8, out.as_mut_ptr(), out.len())
    };
    assert_eq!(st, MsclipStatus::Ok);
    let want = m.params.encode_image(imgs.view()).unwrap();
    assert_eq!(out, want.iter().copied().collect::<Vec<_>>());
}

#[test]
fn text_path_matches_library() {
    let m = load();
    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocabulary::build(["forest river field", "river bank"], 10).unwrap();
    let vpath = dir.path().join("vocab.txt");
    vocab.save(&vpath).unwrap();
    let mut vh = ptr::null_mut();
    assert_eq!(unsafe { msclip_vocab_load(cstr(&vpath).as_ptr(), &mut vh) }, MsclipStatus::Ok);
    let text = CString::new("a river bank").unwrap();
    let mut ids = [0u32; 6];
    assert_eq!(
        unsafe { msclip_vocab_encode(vh, text.as_ptr(), 6, ids.as_mut_ptr(), ids.len()) },
        MsclipStatus::Ok
    );
    assert_eq!(ids.to_vec(), vocab.encode("a river bank", 6));

    let mut out = [0f32; 4];
    assert_eq!(
        unsafe { msclip_encode_text(m.handle, ids.as_ptr(), 1, 6, out.as_mut_ptr(), out.len()) },
        MsclipStatus::Ok
    );
    let toks = Array2::from_shape_vec((1, 6), ids.to_vec()).unwrap();
    let want = m.params.encode_text(toks.view()).unwrap();
    assert_eq!(out.to_vec(), want.iter().copied().collect::<Vec<_>>());
    unsafe { msclip_vocab_free(vh) };
}

#[test]
fn zero_extension_keeps_rgb_embedding() {
    let m = load();
    let bands = CString::new("10").unwrap();
    let mut ext = ptr::null_mut();
    let st = unsafe { msclip_model_extend(m.handle, bands.as_ptr(), MsclipInitMode::Zero, &mut ext) };
    assert_eq!(st, MsclipStatus::Ok);
    let mut info = MsclipModelInfo::default();
    assert_eq!(unsafe { msclip_model_info(ext, &mut info) }, MsclipStatus::Ok);
    assert_eq!(info.in_channels, 10);

    // ten-band order is B2,B3,B4,...; RGB model order is B4,B3,B2
    let ms = Array4::from_shape_fn((1, 10, 8, 8), |(_, c, y, x)| (c * 11 + y * 3 + x) as f32 * 0.01);
    let rgb = Array4::from_shape_fn((1, 3, 8, 8), |(_, c, y, x)| ms[[0, 2 - c, y, x]]);
    let (mut a, mut b) = ([0f32; 4], [0f32; 4]);
    unsafe {
        assert_eq!(msclip_encode_image(ext, ms.as_ptr(), 1, 10, 8, 8, a.as_mut_ptr(), 4), MsclipStatus::Ok);
        assert_eq!(msclip_encode_image(m.handle, rgb.as_ptr(), 1, 3, 8, 8, b.as_mut_ptr(), 4), MsclipStatus::Ok);
        msclip_model_free(ext);
    }
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn errors_set_status_and_message() {
    let m = load();
    let imgs = vec![0f32; 3 * 8 * 8];
    let mut small = [0f32; 2];
    let st = unsafe { msclip_encode_image(m.handle, imgs.as_ptr(), 1, 3, 8, 8, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, MsclipStatus::BufferTooSmall);
    assert!(last_error().contains("needed"));

    let st = unsafe { msclip_encode_image(m.handle, imgs.as_ptr(), 1, 4, 8, 4, small.as_mut_ptr(), 8) };
    assert_eq!(st, MsclipStatus::InvalidArgument);

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { msclip_model_load(ptr::null(), &mut h) }, MsclipStatus::NullPointer);
    let missing = CString::new("/nonexistent/m.msck").unwrap();
    assert_eq!(unsafe { msclip_model_load(missing.as_ptr(), &mut h) }, MsclipStatus::Io);
    assert!(last_error().contains("nonexistent"));

    let mut lr = 0.0;
    assert_eq!(unsafe { msclip_lr_schedule(0, 1.0, 2, 10, &mut lr) }, MsclipStatus::Ok);
    assert!(msclip_last_error().is_null());
    assert_eq!(lr, 0.5);
}

#[test]
fn metrics_through_c_api() {
    // relevant {0, 2}: hits at ranks 1 and 3 -> (1 + 2/3) / 2
    let ranking = [0usize, 1, 2, 3];
    let relevant = [2usize, 0];
    let mut ap = 0.0;
    let st = unsafe { msclip_average_precision_at_k(ranking.as_ptr(), 4, relevant.as_ptr(), 2, 4, &mut ap) };
    assert_eq!(st, MsclipStatus::Ok);
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);

    let dup = [0usize, 0];
    let st = unsafe { msclip_average_precision_at_k(dup.as_ptr(), 2, relevant.as_ptr(), 2, 2, &mut ap) };
    assert_eq!(st, MsclipStatus::InvalidArgument);

    let sims = [0.9, 0.1, 0.2, 0.1];
    let mut flags = [9u8; 4];
    assert_eq!(unsafe { msclip_multilabel_eq2(sims.as_ptr(), 4, flags.as_mut_ptr(), 4) }, MsclipStatus::Ok);
    assert_eq!(flags, [1, 0, 0, 0]);
    assert_eq!(
        unsafe { msclip_multilabel_negative_class(sims.as_ptr(), 4, 0.15, flags.as_mut_ptr(), 4) },
        MsclipStatus::Ok
    );
    assert_eq!(flags, [1, 0, 1, 0]);

    let same = CString::new("green forest").unwrap();
    let mut score = 0.0;
    assert_eq!(unsafe { msclip_meteor(same.as_ptr(), same.as_ptr(), &mut score) }, MsclipStatus::Ok);
    assert!(score > 0.9);

    // orthonormal rows, logit scale 1: every diagonal softmax is e / (e + 1)
    let x = [1.0f64, 0.0, 0.0, 1.0];
    let mut loss = 0.0;
    assert_eq!(unsafe { msclip_info_nce(x.as_ptr(), x.as_ptr(), 2, 2, 0.0, &mut loss) }, MsclipStatus::Ok);
    let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!((loss - want).abs() < 1e-12);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/msclip.h");
    let src = include_str!("../src/lib.rs");
    let names: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 14);
    for n in names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from header");
    }
}
