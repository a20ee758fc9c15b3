//! Band-ordered reflectance rasters and the `MSR1` container.
//!
//! Layout (little-endian): `b"MSR1"`, `u8` band count, per band a `u8` name
//! length followed by the ASCII name, `u32` height, `u32` width, then
//! `band_count * height * width` `f32` values in band-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};

use super::band::{band_positions, check_unique, BandId};
use super::DataError;

pub const MSR1_MAGIC: &[u8; 4] = b"MSR1";

#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    bands: Vec<BandId>,
    values: Array3<f32>,
}

impl MultispectralImage {
    pub fn new(bands: Vec<BandId>, values: Array3<f32>) -> Result<Self, DataError> {
        check_unique(&bands)?;
        if values.shape()[0] != bands.len() {
            return Err(DataError::Shape(format!(
                "{} bands declared but values have {} planes",
                bands.len(),
                values.shape()[0]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite);
        }
        Ok(Self { bands, values })
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn values(&self) -> &Array3<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f32> {
        self.values
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn band_index(&self, band: BandId) -> Option<usize> {
        self.bands.iter().position(|b| *b == band)
    }

    pub fn plane(&self, band: BandId) -> Result<ArrayView2<'_, f32>, DataError> {
        let i = self.band_index(band).ok_or(DataError::MissingBand(band))?;
        Ok(self.values.index_axis(ndarray::Axis(0), i))
    }

    pub(crate) fn positions_of(&self, wanted: &[BandId]) -> Result<Vec<usize>, DataError> {
        band_positions(&self.bands, wanted)
    }

    pub fn write_msr1<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MSR1_MAGIC)?;
        w.write_all(&[self.bands.len() as u8])?;
        for b in &self.bands {
            let name = b.name().as_bytes();
            w.write_all(&[name.len() as u8])?;
            w.write_all(name)?;
        }
        w.write_all(&(self.height() as u32).to_le_bytes())?;
        w.write_all(&(self.width() as u32).to_le_bytes())?;
        write_f32s(&mut w, self.values.iter().copied())
    }

    pub fn read_msr1<R: Read>(mut r: R) -> Result<Self, DataError> {
        let header = read_header(&mut r)?;
        let bands = header
            .band_names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<BandId>, _>>()?;
        let n = bands.len() * header.height * header.width;
        let data = read_f32s(&mut r, n)?;
        let values = Array3::from_shape_vec((bands.len(), header.height, header.width), data)
            .map_err(|e| DataError::Format(e.to_string()))?;
        Self::new(bands, values)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_msr1(&mut w).map_err(|e| DataError::io(path, e))?;
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::read_msr1(BufReader::new(file)).map_err(|e| e.with_path(path))
    }
}

struct Header {
    band_names: Vec<String>,
    height: usize,
    width: usize,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header, DataError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MSR1_MAGIC {
        return Err(DataError::Format(format!("bad magic {magic:?}")));
    }
    let mut byte = [0u8; 1];
    r.read_exact(&mut byte)?;
    let count = byte[0] as usize;
    let mut band_names = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut byte)?;
        let mut name = vec![0u8; byte[0] as usize];
        r.read_exact(&mut name)?;
        band_names.push(
            String::from_utf8(name).map_err(|_| DataError::Format("non-ASCII band name".into()))?,
        );
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let height = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let width = u32::from_le_bytes(word) as usize;
    Ok(Header {
        band_names,
        height,
        width,
    })
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: impl Iterator<Item = f32>) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(4096);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 4096 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, DataError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes an `N x D` matrix as an `MSR1` file with an empty band list
/// (`height = N`, `width = D`).
pub fn write_matrix_msr1<W: Write>(mut w: W, m: &Array2<f32>) -> std::io::Result<()> {
    w.write_all(MSR1_MAGIC)?;
    w.write_all(&[0u8])?;
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    write_f32s(&mut w, m.iter().copied())
}

pub fn read_matrix_msr1<R: Read>(mut r: R) -> Result<Array2<f32>, DataError> {
    let header = read_header(&mut r)?;
    if !header.band_names.is_empty() {
        return Err(DataError::Format(
            "expected a matrix file with an empty band list".into(),
        ));
    }
    let data = read_f32s(&mut r, header.height * header.width)?;
    Array2::from_shape_vec((header.height, header.width), data)
        .map_err(|e| DataError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_plane_count_mismatch() {
        let v = Array3::<f32>::zeros((2, 4, 4));
        assert!(matches!(
            MultispectralImage::new(BandId::RGB.to_vec(), v),
            Err(DataError::Shape(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = Array3::<f32>::zeros((3, 2, 2));
        v[[1, 0, 0]] = f32::NAN;
        assert!(matches!(
            MultispectralImage::new(BandId::RGB.to_vec(), v),
            Err(DataError::NonFinite)
        ));
    }

    #[test]
    fn header_bytes() {
        let img = MultispectralImage::new(
            vec![BandId::B8A],
            Array3::from_elem((1, 1, 2), 1.0f32),
        )
        .unwrap();
        let mut buf = Vec::new();
        img.write_msr1(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MSR1");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 3);
        assert_eq!(&buf[6..9], b"B8A");
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..17], &2u32.to_le_bytes());
        assert_eq!(&buf[17..21], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 25);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let img = MultispectralImage::new(BandId::RGB.to_vec(), Array3::zeros((3, 2, 2))).unwrap();
        let mut buf = Vec::new();
        img.write_msr1(&mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(MultispectralImage::read_msr1(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn msr1_roundtrip(h in 1usize..6, w in 1usize..6, nb in 1usize..5, seed in any::<u32>()) {
            let bands = BandId::TEN_BAND[..nb].to_vec();
            let values = Array3::from_shape_fn((nb, h, w), |(b, y, x)| {
                ((seed as usize + b * 31 + y * 7 + x) % 997) as f32 * 3.25
            });
            let img = MultispectralImage::new(bands, values).unwrap();
            let mut buf = Vec::new();
            img.write_msr1(&mut buf).unwrap();
            let back = MultispectralImage::read_msr1(&buf[..]).unwrap();
            prop_assert_eq!(back, img);
        }
    }

    #[test]
    fn matrix_roundtrip() {
        let m = Array2::from_shape_fn((3, 5), |(i, j)| i as f32 - 0.5 * j as f32);
        let mut buf = Vec::new();
        write_matrix_msr1(&mut buf, &m).unwrap();
        assert_eq!(buf[4], 0);
        assert_eq!(read_matrix_msr1(&buf[..]).unwrap(), m);
    }
}
