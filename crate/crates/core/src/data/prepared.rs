//! Scene records turned into model-ready tensors.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4, Axis};
use rayon::prelude::*;

use super::band::BandId;
use super::preprocess::{compute_stats, prepare_model_input, scale_values, select_bands, NormalizationStats, REFLECTANCE_SCALE};
use super::{DataError, SceneRecord};
use crate::tokenizer::Vocabulary;

/// Per-band statistics of the model input scale (reflectance / 10000).
pub fn input_stats(records: &[SceneRecord], bands: &[BandId]) -> Result<NormalizationStats, DataError> {
    let scaled = records
        .iter()
        .map(|r| Ok(scale_values(&select_bands(&r.image, bands)?, 1.0 / REFLECTANCE_SCALE)))
        .collect::<Result<Vec<_>, DataError>>()?;
    compute_stats(scaled.iter())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub ids: Vec<String>,
    /// `N x C x S x S`
    pub images: Array4<f32>,
    /// `N x context_length`
    pub tokens: Array2<u32>,
    pub labels: Vec<Vec<String>>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Gathers the rows in `idx` into contiguous tensors.
    pub fn gather(&self, idx: &[usize]) -> (Array4<f32>, Array2<u32>) {
        (self.images.select(Axis(0), idx), self.tokens.select(Axis(0), idx))
    }

    pub fn images(&self) -> ArrayView4<'_, f32> {
        self.images.view()
    }

    pub fn tokens(&self) -> ArrayView2<'_, u32> {
        self.tokens.view()
    }
}

pub fn prepare_split(
    records: &[SceneRecord],
    bands: &[BandId],
    image_size: usize,
    stats: &NormalizationStats,
    vocab: &Vocabulary,
    context_length: usize,
) -> Result<PreparedSplit, DataError> {
    let planes = records
        .par_iter()
        .map(|r| prepare_model_input(&r.image, bands, image_size, stats))
        .collect::<Result<Vec<_>, _>>()?;
    let mut images = Array4::zeros((records.len(), bands.len(), image_size, image_size));
    for (mut dst, src) in images.axis_iter_mut(Axis(0)).zip(&planes) {
        dst.assign(src);
    }
    let mut tokens = Array2::zeros((records.len(), context_length));
    for (mut dst, r) in tokens.axis_iter_mut(Axis(0)).zip(records) {
        dst.assign(&ndarray::Array1::from(vocab.encode(&r.caption, context_length)));
    }
    Ok(PreparedSplit {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        images,
        tokens,
        labels: records.iter().map(|r| r.class_labels.clone()).collect(),
    })
}
