//! JSON-lines scene manifests.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, MultispectralImage, SceneRecord, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: String,
    pub caption: String,
    #[serde(default)]
    pub qa_pairs: Vec<(String, String)>,
    pub class_labels: Vec<String>,
    pub split: Split,
}

impl ManifestRow {
    pub fn resolve_image(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn load(&self, base: &Path) -> Result<SceneRecord, DataError> {
        let image = MultispectralImage::load(&self.resolve_image(base))?;
        let rec = SceneRecord {
            id: self.id.clone(),
            image,
            caption: self.caption.clone(),
            qa_pairs: self.qa_pairs.clone(),
            class_labels: self.class_labels.clone(),
            split: self.split,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| DataError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| {
            DataError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes each record's raster under `dir/images/` and the manifest to `dir/manifest.jsonl`.
pub fn save_dataset(dir: &Path, records: &[SceneRecord]) -> Result<PathBuf, DataError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| DataError::io(&images, e))?;
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        let rel = format!("images/{}.msr", r.id);
        r.image.save(&dir.join(&rel))?;
        rows.push(ManifestRow {
            id: r.id.clone(),
            image_path: rel,
            caption: r.caption.clone(),
            qa_pairs: r.qa_pairs.clone(),
            class_labels: r.class_labels.clone(),
            split: r.split,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

/// Loads every row of `split` (all rows when `None`) from a manifest.
pub fn load_records(manifest: &Path, split: Option<Split>) -> Result<Vec<SceneRecord>, DataError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(manifest)?
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .map(|r| r.load(base))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SplitCounts, SynthConfig};

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_classes: 3,
            per_class_count: SplitCounts { train: 2, val: 1, test: 1 },
            image_size: 4,
            spectral_only_classes: vec![],
            ..SynthConfig::default()
        };
        let recs = generate_synthetic(&cfg).unwrap();
        let manifest = save_dataset(dir.path(), &recs).unwrap();
        let back = load_records(&manifest, None).unwrap();
        assert_eq!(back, recs);
        let val = load_records(&manifest, Some(Split::Val)).unwrap();
        assert_eq!(val.len(), 3);

        let text = fs::read_to_string(&manifest).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["id", "image_path", "caption", "qa_pairs", "class_labels", "split"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["split"], "train");
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "{\"id\": 1}\n").unwrap();
        let err = read_manifest(&p).unwrap_err();
        assert!(err.to_string().contains(":1:"));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let err = read_manifest(Path::new("/nonexistent/m.jsonl")).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }
}
