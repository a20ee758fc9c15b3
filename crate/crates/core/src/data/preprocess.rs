//! Band selection, RGB display scaling, bicubic resampling and standardization.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::band::BandId;
use super::raster::MultispectralImage;
use super::DataError;

/// Reflectance values are stored as scaled surface reflectance (0..10000).
pub const REFLECTANCE_SCALE: f32 = 10_000.0;
pub const RGB_CLIP_MAX: f32 = 2000.0;
pub const STD_FLOOR: f64 = 1e-6;
const CUBIC_A: f64 = -0.5;

pub fn select_bands(image: &MultispectralImage, subset: &[BandId]) -> Result<MultispectralImage, DataError> {
    let pos = image.positions_of(subset)?;
    let (h, w) = (image.height(), image.width());
    let mut out = Array3::zeros((subset.len(), h, w));
    for (dst, &src) in pos.iter().enumerate() {
        out.index_axis_mut(Axis(0), dst)
            .assign(&image.values().index_axis(Axis(0), src));
    }
    MultispectralImage::new(subset.to_vec(), out)
}

/// Maps B4/B3/B2 reflectance to an 8-bit RGB raster, clipping at 2000.
pub fn to_rgb_uint8(image: &MultispectralImage) -> Result<Array3<u8>, DataError> {
    let pos = image.positions_of(&BandId::RGB)?;
    let (h, w) = (image.height(), image.width());
    let mut out = Array3::zeros((3, h, w));
    for (c, &src) in pos.iter().enumerate() {
        let plane = image.values().index_axis(Axis(0), src);
        out.index_axis_mut(Axis(0), c)
            .zip_mut_with(&plane, |o, &v| *o = reflectance_to_u8(v));
    }
    Ok(out)
}

#[inline]
pub fn reflectance_to_u8(v: f32) -> u8 {
    let scaled = f64::from(v.clamp(0.0, RGB_CLIP_MAX)) * 255.0 / f64::from(RGB_CLIP_MAX);
    (scaled + 0.5).floor().min(255.0) as u8
}

/// Cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (CUBIC_A + 2.0) * x * x * x - (CUBIC_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * x * x * x - 5.0 * CUBIC_A * x * x + 8.0 * CUBIC_A * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Four source taps (edge-clamped) and their weights for every output index.
fn resample_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    let last = input as i64 - 1;
    (0..output)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as i64;
            let mut idx = [0usize; 4];
            let mut wts = [0f64; 4];
            for k in 0..4 {
                let offset = k as i64 - 1;
                idx[k] = (base + offset).clamp(0, last) as usize;
                wts[k] = cubic_kernel(t - offset as f64);
            }
            (idx, wts)
        })
        .collect()
}

fn resize_plane(plane: ArrayView2<'_, f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = plane.dim();
    let cols = resample_taps(in_w, out_w);
    let rows = resample_taps(in_h, out_h);
    let mut horiz = Array2::<f64>::zeros((in_h, out_w));
    for y in 0..in_h {
        for (x, (idx, wts)) in cols.iter().enumerate() {
            horiz[[y, x]] = (0..4).map(|k| wts[k] * f64::from(plane[[y, idx[k]]])).sum();
        }
    }
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for (y, (idx, wts)) in rows.iter().enumerate() {
        for x in 0..out_w {
            out[[y, x]] = (0..4).map(|k| wts[k] * horiz[[idx[k], x]]).sum::<f64>() as f32;
        }
    }
    out
}

pub fn resize_bicubic(image: &MultispectralImage, out_h: usize, out_w: usize) -> Result<MultispectralImage, DataError> {
    if out_h == 0 || out_w == 0 {
        return Err(DataError::Shape(format!("invalid output size {out_h}x{out_w}")));
    }
    let mut out = Array3::zeros((image.num_bands(), out_h, out_w));
    for (b, plane) in image.values().axis_iter(Axis(0)).enumerate() {
        out.index_axis_mut(Axis(0), b)
            .assign(&resize_plane(plane, out_h, out_w));
    }
    MultispectralImage::new(image.bands().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: BandId,
    pub mean: f64,
    pub std: f64,
}

/// Per-band mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub bands: Vec<BandStats>,
}

impl NormalizationStats {
    pub fn get(&self, band: BandId) -> Option<&BandStats> {
        self.bands.iter().find(|s| s.band == band)
    }

    pub fn identity(bands: &[BandId]) -> Self {
        Self {
            bands: bands
                .iter()
                .map(|&band| BandStats {
                    band,
                    mean: 0.0,
                    std: 1.0,
                })
                .collect(),
        }
    }
}

pub fn normalize(image: &MultispectralImage, stats: &NormalizationStats) -> Result<MultispectralImage, DataError> {
    let mut values = image.values().clone();
    for (b, mut plane) in image.bands().iter().zip(values.axis_iter_mut(Axis(0))) {
        let s = stats.get(*b).ok_or(DataError::MissingBand(*b))?;
        let (mean, std) = (s.mean, s.std.max(STD_FLOOR));
        plane.mapv_inplace(|v| ((f64::from(v) - mean) / std) as f32);
    }
    MultispectralImage::new(image.bands().to_vec(), values)
}

pub fn compute_stats<'a, I>(dataset: I) -> Result<NormalizationStats, DataError>
where
    I: IntoIterator<Item = &'a MultispectralImage>,
{
    let mut iter = dataset.into_iter();
    let first = iter.next().ok_or(DataError::EmptyDataset)?;
    let bands = first.bands().to_vec();
    let mut sum = vec![0f64; bands.len()];
    let mut sum_sq = vec![0f64; bands.len()];
    let mut count = 0usize;
    let mut accumulate = |img: &MultispectralImage| {
        for (b, plane) in img.values().axis_iter(Axis(0)).enumerate() {
            for &v in plane {
                let v = f64::from(v);
                sum[b] += v;
                sum_sq[b] += v * v;
            }
        }
        count += img.height() * img.width();
    };
    accumulate(first);
    for img in iter {
        if img.bands() != bands.as_slice() {
            return Err(DataError::InconsistentBands);
        }
        accumulate(img);
    }
    let n = count as f64;
    Ok(NormalizationStats {
        bands: bands
            .iter()
            .enumerate()
            .map(|(b, &band)| {
                let mean = sum[b] / n;
                let var = (sum_sq[b] / n - mean * mean).max(0.0);
                BandStats {
                    band,
                    mean,
                    std: var.sqrt().max(STD_FLOOR),
                }
            })
            .collect(),
    })
}

/// Multiplies every value by `factor` (reflectance scaling before standardization).
pub fn scale_values(image: &MultispectralImage, factor: f32) -> MultispectralImage {
    let values = image.values().mapv(|v| v * factor);
    MultispectralImage::new(image.bands().to_vec(), values).expect("scaling preserves shape")
}

/// Model-input chain: band selection, optional bicubic resize, reflectance
/// scaling by 1/10000, and per-band standardization.
pub fn prepare_model_input(
    image: &MultispectralImage,
    bands: &[BandId],
    image_size: usize,
    stats: &NormalizationStats,
) -> Result<Array3<f32>, DataError> {
    let mut img = select_bands(image, bands)?;
    if img.height() != image_size || img.width() != image_size {
        img = resize_bicubic(&img, image_size, image_size)?;
    }
    let img = scale_values(&img, 1.0 / REFLECTANCE_SCALE);
    Ok(normalize(&img, stats)?.into_values())
}
