//! Run configuration: one JSON document, overridable with `section.field=value`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::corpus::CorpusConfig;
use crate::data::{BandId, SynthConfig};
use crate::eval::EvalSettings;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// Inputs used when training from a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSettings {
    /// Bands fed to the image tower, in channel order.
    pub bands: Vec<BandId>,
    /// Upper bound on vocabulary size, special tokens included.
    pub vocab_size: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            bands: BandId::RGB.to_vec(),
            vocab_size: 4096,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSettings {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSettings,
    pub eval: EvalSettings,
    pub corpus: CorpusConfig,
    pub paths: PathSettings,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str::<RunConfig>(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut doc = serde_json::to_value(&self).map_err(|e| CliError::config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override {o:?} is not key=value")))?;
            set_path(&mut doc, key.trim(), parse_value(raw))?;
        }
        serde_json::from_value(doc).map_err(|e| CliError::config(format!("after overrides: {e}")))
    }
}

/// JSON if it parses, otherwise the raw text as a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Only existing keys can be set, so misspelt paths are reported instead of ignored.
fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CliError::config(format!("unknown config key {key:?}")))?;
    }
    *cur = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "train.peak_lr=0.001".into(),
                "data.bands=[\"B4\",\"B3\",\"B2\",\"B8\"]".into(),
                "eval.negative_class=other stuff".into(),
                "synth.per_class_count.val=3".into(),
            ])
            .unwrap();
        assert_eq!(c.train.peak_lr, 1e-3);
        assert_eq!(c.data.bands.len(), 4);
        assert_eq!(c.eval.negative_class, "other stuff");
        assert_eq!(c.synth.per_class_count.val, 3);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in ["train.peak_lrr=1", "train.peak_lr=abc", "nokey"] {
            let e = RunConfig::default().with_overrides(&[o.to_string()]).unwrap_err();
            assert_eq!(e.code, 2, "{o}");
        }
    }

    #[test]
    fn unknown_section_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"trian": {}}"#).unwrap();
        assert_eq!(RunConfig::load(Some(&p), &[]).unwrap_err().code, 2);
        assert_eq!(RunConfig::load(Some(&dir.path().join("none.json")), &[]).unwrap_err().code, 3);
    }
}
