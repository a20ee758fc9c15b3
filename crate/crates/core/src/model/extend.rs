//! Widening a 3-channel patch embedding to an arbitrary band list.

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParameters};
use crate::data::BandId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// New channels start at zero, so the extended model initially ignores them.
    ZeroInit,
    /// New channels start at the mean of the three RGB slices.
    MeanRgbInit,
}

impl std::str::FromStr for InitMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(InitMode::ZeroInit),
            "mean" => Ok(InitMode::MeanRgbInit),
            other => Err(ModelError::InvalidConfig(format!("unknown init mode {other:?} (expected zero or mean)"))),
        }
    }
}

/// Positions of B4, B3, B2 (in that order) within `bands`.
pub fn rgb_positions(bands: &[BandId]) -> Result<[usize; 3], ModelError> {
    let mut out = [0; 3];
    for (slot, want) in out.iter_mut().zip(BandId::RGB) {
        *slot = bands
            .iter()
            .position(|b| *b == want)
            .ok_or_else(|| ModelError::InvalidPositions(format!("band list has no {want}")))?;
    }
    Ok(out)
}

/// Returns a copy of `params` whose patch embedding accepts `new_bands`.
///
/// Channel `c` of the original weight (ordered B4, B3, B2) is copied to
/// `rgb[c]`; every other channel is filled according to `mode`.
pub fn extend_patch_embed(
    params: &ModelParameters,
    new_bands: &[BandId],
    rgb: [usize; 3],
    mode: InitMode,
) -> Result<ModelParameters, ModelError> {
    let w = &params.vision.patch_weight;
    let (d, c, ph, pw) = w.dim();
    if c != 3 {
        return Err(ModelError::ShapeMismatch(format!(
            "patch embedding has {c} input channels, extension needs 3"
        )));
    }
    let n = new_bands.len();
    if n < 3 {
        return Err(ModelError::ShapeMismatch(format!("new band list has {n} bands, need at least 3")));
    }
    let mut seen = rgb.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != 3 || rgb.iter().any(|&i| i >= n) {
        return Err(ModelError::InvalidPositions(format!("{rgb:?} for {n} bands")));
    }
    for (&i, want) in rgb.iter().zip(BandId::RGB) {
        if new_bands[i] != want {
            return Err(ModelError::InvalidPositions(format!(
                "position {i} holds {}, expected {want}",
                new_bands[i]
            )));
        }
    }

    let fill = match mode {
        InitMode::ZeroInit => ndarray::Array3::zeros((d, ph, pw)),
        InitMode::MeanRgbInit => w.mean_axis(Axis(1)).expect("three channels"),
    };
    let mut nw = Array4::zeros((d, n, ph, pw));
    for ch in 0..n {
        let src = match rgb.iter().position(|&p| p == ch) {
            Some(orig) => w.slice(s![.., orig, .., ..]),
            None => fill.view(),
        };
        nw.slice_mut(s![.., ch, .., ..]).assign(&src);
    }
    let mut out = params.clone();
    out.config.in_channels = n;
    out.vision.patch_weight = nw;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};
    use ndarray::Array4;

    fn base() -> ModelParameters {
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
            ..ModelConfig::default()
        };
        init_model(&cfg, 7).unwrap()
    }

    #[test]
    fn zero_init_shapes_and_values() {
        let p = base();
        let bands = BandId::TEN_BAND;
        let pos = rgb_positions(&bands).unwrap();
        assert_eq!(pos, [2, 1, 0]);
        let e = extend_patch_embed(&p, &bands, pos, InitMode::ZeroInit).unwrap();
        assert_eq!(e.vision.patch_weight.dim(), (8, 10, 4, 4));
        assert_eq!(e.config.in_channels, 10);
        for ch in 3..10 {
            assert_eq!(e.vision.patch_weight.slice(s![.., ch, .., ..]).iter().map(|v| v.abs()).sum::<f32>(), 0.0);
        }
        for (c, &at) in pos.iter().enumerate() {
            assert_eq!(e.vision.patch_weight.slice(s![.., at, .., ..]), p.vision.patch_weight.slice(s![.., c, .., ..]));
        }
        let mut rest = e.clone();
        rest.vision.patch_weight = p.vision.patch_weight.clone();
        rest.config.in_channels = 3;
        assert_eq!(rest, p);
    }

    #[test]
    fn mean_init_is_channel_mean() {
        let p = base();
        let bands = BandId::TEN_BAND;
        let e = extend_patch_embed(&p, &bands, rgb_positions(&bands).unwrap(), InitMode::MeanRgbInit).unwrap();
        let w = &p.vision.patch_weight;
        for ch in 3..10 {
            for ((o, y, x), v) in e.vision.patch_weight.slice(s![.., ch, .., ..]).indexed_iter() {
                let m = (w[[o, 0, y, x]] + w[[o, 1, y, x]] + w[[o, 2, y, x]]) / 3.0;
                assert!((v - m).abs() <= f32::EPSILON * m.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn zero_init_matches_rgb_embedding() {
        let p = base();
        let bands = BandId::TEN_BAND;
        let pos = rgb_positions(&bands).unwrap();
        let e = extend_patch_embed(&p, &bands, pos, InitMode::ZeroInit).unwrap();
        let ms = Array4::from_shape_fn((2, 10, 8, 8), |(i, c, y, x)| ((i * 7 + c * 13 + y * 3 + x) % 11) as f32 - 5.0);
        let mut rgb = Array4::zeros((2, 3, 8, 8));
        for (c, &at) in pos.iter().enumerate() {
            rgb.slice_mut(s![.., c, .., ..]).assign(&ms.slice(s![.., at, .., ..]));
        }
        let a = e.encode_image(ms.view()).unwrap();
        let b = p.encode_image(rgb.view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = base();
        let bands = BandId::TEN_BAND;
        assert!(matches!(
            extend_patch_embed(&p, &bands, [0, 1, 2], InitMode::ZeroInit),
            Err(ModelError::InvalidPositions(_))
        ));
        assert!(matches!(
            extend_patch_embed(&p, &bands, [2, 2, 0], InitMode::ZeroInit),
            Err(ModelError::InvalidPositions(_))
        ));
        assert!(matches!(
            extend_patch_embed(&p, &bands, [2, 1, 10], InitMode::ZeroInit),
            Err(ModelError::InvalidPositions(_))
        ));
        let wide = extend_patch_embed(&p, &bands, [2, 1, 0], InitMode::ZeroInit).unwrap();
        assert!(matches!(
            extend_patch_embed(&wide, &bands, [2, 1, 0], InitMode::ZeroInit),
            Err(ModelError::ShapeMismatch(_))
        ));
        assert!(rgb_positions(&[BandId::B4, BandId::B8]).is_err());
    }
}
