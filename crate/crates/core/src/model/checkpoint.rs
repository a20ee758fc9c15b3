//! `MSCK` checkpoint container.
//!
//! Layout (little-endian): `b"MSCK"`, `u16` version, `u32` config length and
//! the JSON-encoded [`ModelConfig`], then one record per tensor until EOF:
//! `u16` name length, ASCII name, `u8` ndim, `ndim` x `u32` dims and the
//! `f32` payload in row-major order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParameters};

pub const MSCK_MAGIC: &[u8; 4] = b"MSCK";
pub const MSCK_VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_checkpoint<W: Write>(params: &ModelParameters, mut w: W) -> std::io::Result<()> {
    w.write_all(MSCK_MAGIC)?;
    w.write_all(&MSCK_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(&params.config).map_err(std::io::Error::other)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    for (name, t) in params.tensors() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.ndim() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>, ModelError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, ModelError> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Returns `None` on a clean end of stream.
fn read_name_len<R: Read>(r: &mut R) -> Result<Option<u16>, ModelError> {
    let mut b = [0u8; 2];
    let mut got = 0;
    while got < 2 {
        match r.read(&mut b[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(bad("truncated tensor name length")),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(bad(format!("read failed: {e}"))),
        }
    }
    Ok(Some(u16::from_le_bytes(b)))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParameters, ModelError> {
    if read_exact(&mut r, 4, "magic")? != MSCK_MAGIC {
        return Err(bad("not an MSCK checkpoint"));
    }
    let v = read_exact(&mut r, 2, "version")?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != MSCK_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = read_u32(&mut r, "config length")? as usize;
    let cfg_bytes = read_exact(&mut r, cfg_len, "config")?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes).map_err(|e| bad(format!("bad config: {e}")))?;
    let mut params = ModelParameters::zeros(&config)?;

    let mut loaded: HashMap<String, Vec<f32>> = HashMap::new();
    let mut shapes: HashMap<String, Vec<usize>> = HashMap::new();
    while let Some(len) = read_name_len(&mut r)? {
        let name = String::from_utf8(read_exact(&mut r, len as usize, "tensor name")?)
            .map_err(|_| bad("tensor name is not ASCII"))?;
        let ndim = read_exact(&mut r, 1, "ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r, "dims")? as usize);
        }
        let count: usize = dims.iter().product();
        let raw = read_exact(&mut r, count * 4, &format!("payload of {name}"))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if loaded.insert(name.clone(), values).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        shapes.insert(name, dims);
    }

    for (name, mut t) in params.tensors_mut() {
        let values = loaded.remove(&name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if shapes[&name] != t.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "tensor {name} is {:?} in file, config implies {:?}",
                shapes[&name],
                t.shape()
            )));
        }
        for (dst, src) in t.iter_mut().zip(values) {
            *dst = src;
        }
    }
    if let Some(extra) = loaded.keys().min() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    if !params.is_finite() {
        return Err(bad("checkpoint contains non-finite values"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParameters, path: &Path) -> Result<(), ModelError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    write_checkpoint(params, BufWriter::new(f)).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParameters, ModelError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn cfg() -> ModelConfig {
        ModelConfig {
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
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let p = init_model(&cfg(), 5).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&p, &mut a).unwrap();
        let q = read_checkpoint(a.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut b = Vec::new();
        write_checkpoint(&q, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..4], b"MSCK");
        assert_eq!(u16::from_le_bytes([a[4], a[5]]), 1);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.msck");
        let p = init_model(&cfg(), 1).unwrap();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let missing = dir.path().join("nope.msck");
        assert!(matches!(load_checkpoint(&missing), Err(ModelError::Io { .. })));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let p = init_model(&cfg(), 1).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&p, &mut a).unwrap();
        assert!(read_checkpoint(&a[..a.len() - 3]).is_err());
        let mut wrong = a.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        // drop the trailing log_temperature record (2 + 15 + 1 + 4 bytes)
        let short = &a[..a.len() - 22];
        let err = read_checkpoint(short).unwrap_err();
        assert!(err.to_string().contains("log_temperature"), "{err}");
    }
}
