//! Freeze policies resolved to a per-tensor trainable mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParameters};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    AllTrainable,
    ProjectionOnly,
    AttentionOnly,
    ImageAllTextFrozen,
    /// Trainable-name patterns; `*` matches any run of characters.
    Custom(Vec<String>),
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreezePolicy::AllTrainable => f.write_str("all"),
            FreezePolicy::ProjectionOnly => f.write_str("projection"),
            FreezePolicy::AttentionOnly => f.write_str("attention"),
            FreezePolicy::ImageAllTextFrozen => f.write_str("image"),
            FreezePolicy::Custom(p) => write!(f, "custom:{}", p.join(",")),
        }
    }
}

impl FromStr for FreezePolicy {
    type Err = ModelError;

    /// Accepts `all`, `projection`, `attention`, `image` or `custom:pat1,pat2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(FreezePolicy::AllTrainable),
            "projection" => Ok(FreezePolicy::ProjectionOnly),
            "attention" => Ok(FreezePolicy::AttentionOnly),
            "image" => Ok(FreezePolicy::ImageAllTextFrozen),
            other => match other.strip_prefix("custom:") {
                Some(rest) => Ok(FreezePolicy::Custom(
                    rest.split(',').map(str::trim).filter(|p| !p.is_empty()).map(String::from).collect(),
                )),
                None => Err(ModelError::UnknownPattern(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeSpec {
    pub policy: FreezePolicy,
    pub patch_embed_always_trainable: bool,
}

impl Default for FreezeSpec {
    fn default() -> Self {
        Self {
            policy: FreezePolicy::AllTrainable,
            patch_embed_always_trainable: true,
        }
    }
}

impl FreezeSpec {
    pub fn new(policy: FreezePolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }
}

/// Trainable flags aligned with [`ModelParameters::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    entries: Vec<(String, bool)>,
}

impl TrainableMask {
    pub fn all(params: &ModelParameters) -> Self {
        Self {
            entries: params.names().into_iter().map(|n| (n, true)).collect(),
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, t)| n == name && *t)
    }

    pub fn flags(&self) -> impl Iterator<Item = bool> + '_ {
        self.entries.iter().map(|(_, t)| *t)
    }

    pub fn entries(&self) -> &[(String, bool)] {
        &self.entries
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.entries.iter().filter(|(_, t)| *t).map(|(n, _)| n.as_str()).collect()
    }

    pub fn frozen_names(&self) -> Vec<&str> {
        self.entries.iter().filter(|(_, t)| !*t).map(|(n, _)| n.as_str()).collect()
    }
}

pub(crate) fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !name.starts_with(first) || name.len() < first.len() + last.len() || !name.ends_with(last) {
        return false;
    }
    let mut rest = &name[first.len()..name.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

fn is_attention_weight(name: &str) -> bool {
    [".attn.q.weight", ".attn.k.weight", ".attn.v.weight", ".attn.out.weight"]
        .iter()
        .any(|s| name.ends_with(s))
}

pub fn resolve_freeze(params: &ModelParameters, spec: &FreezeSpec) -> Result<TrainableMask, ModelError> {
    let names = params.names();
    if let FreezePolicy::Custom(patterns) = &spec.policy {
        if let Some(p) = patterns.iter().find(|p| !names.iter().any(|n| glob_match(p, n))) {
            return Err(ModelError::UnknownPattern(p.clone()));
        }
    }
    let entries = names
        .into_iter()
        .map(|name| {
            let by_policy = match &spec.policy {
                FreezePolicy::AllTrainable => true,
                FreezePolicy::ProjectionOnly => {
                    matches!(name.as_str(), "vision_proj" | "text_proj" | "log_temperature")
                }
                FreezePolicy::AttentionOnly => is_attention_weight(&name) || name == "log_temperature",
                FreezePolicy::ImageAllTextFrozen => {
                    name.starts_with("patch_embed.")
                        || name.starts_with("vision.")
                        || name == "vision_proj"
                        || name == "log_temperature"
                }
                FreezePolicy::Custom(patterns) => patterns.iter().any(|p| glob_match(p, &name)),
            };
            let forced = spec.patch_embed_always_trainable && name.starts_with("patch_embed.");
            let t = by_policy || forced;
            (name, t)
        })
        .collect();
    Ok(TrainableMask { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    fn params() -> ModelParameters {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 4,
            vision_dim: 8,
            vision_depth: 2,
            vision_heads: 2,
            text_dim: 8,
            text_depth: 2,
            text_heads: 2,
            vocab_size: 10,
            context_length: 6,
            proj_dim: 4,
            ..ModelConfig::default()
        };
        init_model(&cfg, 0).unwrap()
    }

    #[test]
    fn projection_only() {
        let p = params();
        let m = resolve_freeze(&p, &FreezeSpec::new(FreezePolicy::ProjectionOnly)).unwrap();
        let mut t = m.trainable_names();
        t.sort();
        assert_eq!(
            t,
            vec!["log_temperature", "patch_embed.bias", "patch_embed.weight", "text_proj", "vision_proj"]
        );
        let strict = FreezeSpec {
            policy: FreezePolicy::ProjectionOnly,
            patch_embed_always_trainable: false,
        };
        assert_eq!(resolve_freeze(&p, &strict).unwrap().trainable_names().len(), 3);
    }

    #[test]
    fn all_trainable() {
        let p = params();
        let m = resolve_freeze(&p, &FreezeSpec::default()).unwrap();
        assert!(m.flags().all(|t| t));
        assert_eq!(m.entries().len(), p.names().len());
    }

    #[test]
    fn attention_only_counts() {
        let p = params();
        let m = resolve_freeze(&p, &FreezeSpec::new(FreezePolicy::AttentionOnly)).unwrap();
        let t = m.trainable_names();
        let vision = t.iter().filter(|n| n.starts_with("vision.blocks") && n.contains(".attn.")).count();
        let text = t.iter().filter(|n| n.starts_with("text.blocks") && n.contains(".attn.")).count();
        assert_eq!((vision, text), (8, 8));
        assert!(!t.iter().any(|n| n.contains(".mlp.")));
        assert!(!t.iter().any(|n| n.contains(".attn.") && n.ends_with(".bias")));
        assert!(m.is_trainable("log_temperature"));
    }

    #[test]
    fn image_tower() {
        let p = params();
        let m = resolve_freeze(&p, &FreezeSpec::new(FreezePolicy::ImageAllTextFrozen)).unwrap();
        for (name, t) in m.entries() {
            let image_side = name.starts_with("vision") || name.starts_with("patch_embed") || name == "log_temperature";
            assert_eq!(*t, image_side, "{name}");
        }
    }

    #[test]
    fn custom_patterns() {
        let p = params();
        let spec = FreezeSpec::new("custom:text.blocks.*.mlp.*,text_proj".parse().unwrap());
        let m = resolve_freeze(&p, &spec).unwrap();
        assert!(m.is_trainable("text.blocks.1.mlp.fc2.bias"));
        assert!(m.is_trainable("text_proj"));
        assert!(!m.is_trainable("vision_proj"));
        let bad = FreezeSpec::new(FreezePolicy::Custom(vec!["decoder.*".into()]));
        assert!(matches!(resolve_freeze(&p, &bad), Err(ModelError::UnknownPattern(_))));
    }

    #[test]
    fn glob() {
        assert!(glob_match("a*c", "abc"));
        assert!(glob_match("a*c", "ac"));
        assert!(!glob_match("a*c", "abcd"));
        assert!(glob_match("*", "x"));
        assert!(glob_match("a*b*c", "a-b-b-c"));
        assert!(!glob_match("ab*ba", "aba"));
    }

    #[test]
    fn policy_strings_round_trip() {
        for s in ["all", "projection", "attention", "image", "custom:a.*,b"] {
            let p: FreezePolicy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("frozen".parse::<FreezePolicy>().is_err());
    }
}
