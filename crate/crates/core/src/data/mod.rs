//! Multispectral rasters, preprocessing, synthetic scenes and dataset manifests.

pub mod band;
pub mod manifest;
pub mod prepared;
pub mod preprocess;
pub mod raster;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use band::{parse_band_list, BandId};
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use preprocess::{
    compute_stats, normalize, prepare_model_input, resize_bicubic, select_bands, to_rgb_uint8,
    BandStats, NormalizationStats,
};
pub use prepared::{input_stats, prepare_split, PreparedSplit};
pub use raster::MultispectralImage;
pub use synth::{generate_synthetic, SplitCounts, SynthConfig};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("band {0} is not present in the image")]
    MissingBand(BandId),
    #[error("band {0} listed more than once")]
    DuplicateBand(BandId),
    #[error("unknown band name {0:?}")]
    UnknownBand(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("raster contains non-finite values")]
    NonFinite,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("images have inconsistent band lists")]
    InconsistentBands,
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("invalid scene record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn with_path(self, path: &Path) -> Self {
        match self {
            DataError::Stream(source) => DataError::io(path, source),
            DataError::Format(m) => DataError::Format(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

/// One dataset row: an image with its caption, Q&A pairs and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub image: MultispectralImage,
    pub caption: String,
    pub qa_pairs: Vec<(String, String)>,
    pub class_labels: Vec<String>,
    pub split: Split,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |reason: &str| DataError::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.caption.trim().is_empty() {
            return Err(fail("caption is empty"));
        }
        if self.class_labels.is_empty() {
            return Err(fail("class_labels is empty"));
        }
        Ok(())
    }
}
