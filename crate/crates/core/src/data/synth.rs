//! Seeded synthetic scene/caption generator for desk-scale experiments.
//!
//! Every class owns a spectral signature. Classes listed in
//! `spectral_only_classes` share one B2/B3/B4 triplet and differ only in the
//! remaining bands. The spatial texture and the noise field of the `j`-th scene
//! of a split are drawn from a stream keyed by `(seed, split, j)`, so they are
//! shared by all classes; scenes of two spectral-only classes are therefore
//! pixel-identical in RGB.

use std::f64::consts::PI;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::band::{check_unique, BandId};
use super::raster::MultispectralImage;
use super::{DataError, SceneRecord, Split};

pub const DEFAULT_CLASS_NAMES: [&str; 16] = [
    "forest",
    "river",
    "farmland",
    "urban area",
    "wetland",
    "pasture",
    "shrubland",
    "bare soil",
    "lake",
    "vineyard",
    "orchard",
    "grassland",
    "industrial site",
    "highway",
    "beach",
    "glacier",
];

pub const DEFAULT_CAPTION_TEMPLATES: [&str; 10] = [
    "a satellite photo of {}",
    "a satellite image of {}",
    "an aerial photo of {}",
    "a remote sensing image of {}",
    "an overhead view of {}",
    "a top-down satellite view of {}",
    "an overhead image of {}",
    "a bird's eye view of {}",
    "this scene shows {}",
    "{} captured by a satellite",
];

const ADJECTIVES: [&str; 6] = ["dense", "sparse", "patchy", "extensive", "small", "large"];
const SUFFIXES: [&str; 5] = [
    "in summer",
    "near a road",
    "under clear skies",
    "with some clouds",
    "in a rural area",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub per_class_count: SplitCounts,
    pub image_size: usize,
    pub band_set: Vec<BandId>,
    pub spectral_only_classes: Vec<usize>,
    pub noise_std: f32,
    /// Relative amplitude of the multiplicative cosine texture.
    pub texture_amplitude: f32,
    /// Defaults to the first `num_classes` entries of [`DEFAULT_CLASS_NAMES`].
    pub class_names: Option<Vec<String>>,
    /// One template list shared by all classes, or one list per class.
    pub caption_templates: Vec<Vec<String>>,
    /// Fraction of scenes that mix two classes (left/right halves, two labels).
    pub multilabel_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 8,
            per_class_count: SplitCounts {
                train: 200,
                val: 25,
                test: 50,
            },
            image_size: 16,
            band_set: BandId::TEN_BAND.to_vec(),
            spectral_only_classes: vec![4, 5, 6, 7],
            noise_std: 100.0,
            texture_amplitude: 0.15,
            class_names: None,
            caption_templates: vec![DEFAULT_CAPTION_TEMPLATES.iter().map(|s| s.to_string()).collect()],
            multilabel_fraction: 0.0,
        }
    }
}

fn invalid(reason: impl Into<String>) -> DataError {
    DataError::InvalidConfig(reason.into())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(invalid(format!(
                "num_classes must be >= 2 (got {})",
                self.num_classes
            )));
        }
        if self.image_size == 0 {
            return Err(invalid("image_size must be >= 1"));
        }
        check_unique(&self.band_set).map_err(|e| invalid(e.to_string()))?;
        for b in BandId::RGB {
            if !self.band_set.contains(&b) {
                return Err(invalid(format!("band_set must include {b}")));
            }
        }
        for (i, &k) in self.spectral_only_classes.iter().enumerate() {
            if k >= self.num_classes {
                return Err(invalid(format!(
                    "spectral_only_classes contains {k}, outside 0..{}",
                    self.num_classes
                )));
            }
            if self.spectral_only_classes[..i].contains(&k) {
                return Err(invalid(format!("spectral_only_classes repeats {k}")));
            }
        }
        if self.spectral_only_classes.len() >= 2 && self.band_set.iter().all(|b| b.is_rgb()) {
            return Err(invalid(
                "spectral_only_classes need at least one band outside B2/B3/B4",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(invalid("noise_std must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.texture_amplitude) {
            return Err(invalid("texture_amplitude must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.multilabel_fraction) {
            return Err(invalid("multilabel_fraction must be in [0, 1]"));
        }
        if self.caption_templates.len() != 1 && self.caption_templates.len() != self.num_classes {
            return Err(invalid(
                "caption_templates must hold one shared list or one list per class",
            ));
        }
        for list in &self.caption_templates {
            if list.is_empty() {
                return Err(invalid("caption template list is empty"));
            }
            for t in list {
                if t.matches("{}").count() != 1 {
                    return Err(invalid(format!(
                        "caption template {t:?} must contain exactly one {{}}"
                    )));
                }
            }
        }
        let names = self.class_names();
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(invalid("class names must be non-empty"));
            }
            if names[..i].contains(n) {
                return Err(invalid(format!("duplicate class name {n:?}")));
            }
        }
        if names.len() != self.num_classes {
            return Err(invalid(format!(
                "{} class names given for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        match &self.class_names {
            Some(n) => n.clone(),
            None => (0..self.num_classes)
                .map(|k| {
                    DEFAULT_CLASS_NAMES
                        .get(k)
                        .map(|s| s.to_string())
                        .unwrap_or_else(|| format!("land cover {k}"))
                })
                .collect(),
        }
    }

    fn templates_for(&self, class: usize) -> &[String] {
        if self.caption_templates.len() == 1 {
            &self.caption_templates[0]
        } else {
            &self.caption_templates[class]
        }
    }

    /// Minimum separation between distinct signature values.
    fn spacing(&self) -> f64 {
        (6.0 * f64::from(self.noise_std)).max(300.0)
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let s = parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p));
    ChaCha8Rng::seed_from_u64(s)
}

const TAG_SIGNATURE: u64 = 1;
const TAG_FIELD: u64 = 2;
const TAG_TEXT: u64 = 3;
const TAG_MIX: u64 = 4;

fn split_tag(split: Split) -> u64 {
    match split {
        Split::Train => 11,
        Split::Val => 12,
        Split::Test => 13,
    }
}

/// Per-class reflectance signatures over `config.band_set`.
pub fn class_signatures(config: &SynthConfig) -> Result<Vec<Vec<f32>>, DataError> {
    config.validate()?;
    let mut rng = stream(config.seed, &[TAG_SIGNATURE]);
    let spacing = config.spacing();
    let rgb_pos: Vec<usize> = BandId::RGB
        .iter()
        .map(|b| config.band_set.iter().position(|x| x == b).unwrap())
        .collect();
    let is_spectral = |k: usize| config.spectral_only_classes.contains(&k);

    // RGB triplets: one per ordinary class plus one shared by the spectral-only group.
    let groups = (0..config.num_classes).filter(|&k| !is_spectral(k)).count()
        + usize::from(!config.spectral_only_classes.is_empty());
    let mut triplets: Vec<[f64; 3]> = Vec::with_capacity(groups);
    let mut tries = 0;
    while triplets.len() < groups {
        tries += 1;
        if tries > 100_000 {
            return Err(invalid(
                "cannot place well-separated RGB signatures; lower noise_std or num_classes",
            ));
        }
        let cand = [
            rng.random_range(300.0..3500.0),
            rng.random_range(300.0..3500.0),
            rng.random_range(300.0..3500.0),
        ];
        let far = triplets.iter().all(|t| {
            t.iter()
                .zip(cand.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                >= spacing
        });
        if far {
            triplets.push(cand);
        }
    }
    let shared_rgb = if config.spectral_only_classes.is_empty() {
        None
    } else {
        triplets.pop()
    };

    let nb = config.band_set.len();
    let n_spec = config.spectral_only_classes.len();
    // shared base and a rank permutation per non-RGB band for the spectral-only group
    let spectral_layout: Vec<(f64, Vec<usize>)> = (0..nb)
        .map(|_| {
            let base = rng.random_range(500.0..2500.0);
            let mut perm: Vec<usize> = (0..n_spec).collect();
            perm.shuffle(&mut rng);
            (base, perm)
        })
        .collect();

    let mut ordinary = triplets.into_iter();
    let mut sigs = Vec::with_capacity(config.num_classes);
    for k in 0..config.num_classes {
        let mut sig = vec![0f64; nb];
        if let Some(rank) = config.spectral_only_classes.iter().position(|&c| c == k) {
            let rgb = shared_rgb.expect("spectral group has a triplet");
            for (b, s) in sig.iter_mut().enumerate() {
                if let Some(c) = rgb_pos.iter().position(|&p| p == b) {
                    *s = rgb[c];
                } else {
                    let (base, perm) = &spectral_layout[b];
                    *s = base + perm[rank] as f64 * spacing;
                }
            }
        } else {
            let rgb = ordinary.next().expect("one triplet per ordinary class");
            for (b, s) in sig.iter_mut().enumerate() {
                *s = match rgb_pos.iter().position(|&p| p == b) {
                    Some(c) => rgb[c],
                    None => rng.random_range(300.0..5000.0),
                };
            }
        }
        sigs.push(sig.into_iter().map(|v| v as f32).collect());
    }
    Ok(sigs)
}

struct SceneField {
    /// Multiplicative texture, `size x size`, spatial mean zero.
    texture: Vec<f64>,
    /// Additive noise, `bands x size x size`.
    noise: Vec<f32>,
}

fn scene_field(config: &SynthConfig, split: Split, j: usize) -> SceneField {
    let mut rng = stream(config.seed, &[TAG_FIELD, split_tag(split), j as u64]);
    let size = config.image_size;
    let components: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let (mut fx, mut fy) = (0u32, 0u32);
            while fx == 0 && fy == 0 {
                fx = rng.random_range(0..3);
                fy = rng.random_range(0..3);
            }
            let phase = rng.random_range(0.0..2.0 * PI);
            let weight = rng.random_range(0.5..1.0);
            (f64::from(fx), f64::from(fy), phase, weight)
        })
        .collect();
    let total: f64 = components.iter().map(|c| c.3).sum();
    let mut texture = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let t: f64 = components
                .iter()
                .map(|&(fx, fy, ph, w)| {
                    w * (2.0 * PI * (fx * x as f64 + fy * y as f64) / size as f64 + ph).cos()
                })
                .sum();
            texture.push(t / total);
        }
    }
    let n = config.band_set.len() * size * size;
    let noise = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (z * f64::from(config.noise_std)) as f32
        })
        .collect();
    SceneField { texture, noise }
}

fn render(config: &SynthConfig, field: &SceneField, sigs: &[&[f32]]) -> Array3<f32> {
    let size = config.image_size;
    let nb = config.band_set.len();
    let amp = f64::from(config.texture_amplitude);
    Array3::from_shape_fn((nb, size, size), |(b, y, x)| {
        // mixed scenes: left half from the first class, right half from the second
        let sig = if sigs.len() > 1 && x >= size / 2 { sigs[1] } else { sigs[0] };
        let t = field.texture[y * size + x];
        let v = f64::from(sig[b]) * (1.0 + amp * t) + f64::from(field.noise[(b * size + y) * size + x]);
        v.max(0.0) as f32
    })
}

fn caption_for(config: &SynthConfig, names: &[String], classes: &[usize], rng: &mut ChaCha8Rng) -> String {
    let templates = config.templates_for(classes[0]);
    let template = &templates[rng.random_range(0..templates.len())];
    let mut subject: Vec<String> = Vec::new();
    for &k in classes {
        let mut phrase = names[k].clone();
        if rng.random_bool(0.5) {
            phrase = format!("{} {}", ADJECTIVES[rng.random_range(0..ADJECTIVES.len())], phrase);
        }
        subject.push(phrase);
    }
    let mut caption = template.replacen("{}", &subject.join(" and "), 1);
    if rng.random_bool(0.5) {
        caption.push(' ');
        caption.push_str(SUFFIXES[rng.random_range(0..SUFFIXES.len())]);
    }
    caption
}

fn qa_for(names: &[String], classes: &[usize], rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let main = &names[classes[0]];
    let mut bank = vec![
        (
            "What is the dominant land cover in this image?".to_string(),
            format!("The dominant land cover is {main}."),
        ),
        (
            "Which land cover type occupies most of the scene?".to_string(),
            format!("Mostly {main}."),
        ),
        (
            "How would you describe the texture of the scene?".to_string(),
            format!("The scene shows a {} pattern.", ADJECTIVES[rng.random_range(0..ADJECTIVES.len())]),
        ),
        (
            "Are there clouds in the image?".to_string(),
            "No clouds are visible.".to_string(),
        ),
        (
            format!("Where is the {main} located in the image?"),
            if classes.len() > 1 {
                "It covers the left half of the image.".to_string()
            } else {
                "It covers most of the image.".to_string()
            },
        ),
    ];
    bank.shuffle(rng);
    bank.truncate(3);
    bank
}

/// Generates train, val and test scenes; a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<SceneRecord>, DataError> {
    let sigs = class_signatures(config)?;
    let names = config.class_names();
    let k = config.num_classes;
    let mut records = Vec::with_capacity(config.per_class_count.total() * k);
    for split in Split::ALL {
        let count = config.per_class_count.get(split);
        let fields: Vec<SceneField> = (0..count).map(|j| scene_field(config, split, j)).collect();
        for class in 0..k {
            for (j, field) in fields.iter().enumerate() {
                let mut mix_rng = stream(config.seed, &[TAG_MIX, split_tag(split), j as u64, class as u64]);
                let mut classes = vec![class];
                if config.multilabel_fraction > 0.0 && mix_rng.random_bool(config.multilabel_fraction) {
                    classes.push((class + 1 + mix_rng.random_range(0..k - 1)) % k);
                }
                let sig_refs: Vec<&[f32]> = classes.iter().map(|&c| sigs[c].as_slice()).collect();
                let values = render(config, field, &sig_refs);
                let image = MultispectralImage::new(config.band_set.clone(), values)?;
                let mut text_rng = stream(config.seed, &[TAG_TEXT, split_tag(split), j as u64, class as u64]);
                let caption = caption_for(config, &names, &classes, &mut text_rng);
                let qa_pairs = qa_for(&names, &classes, &mut text_rng);
                records.push(SceneRecord {
                    id: format!("{}-{:03}-{:05}", split.as_str(), class, j),
                    image,
                    caption,
                    qa_pairs,
                    class_labels: classes.iter().map(|&c| names[c].clone()).collect(),
                    split,
                });
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            num_classes: 4,
            per_class_count: SplitCounts { train: 6, val: 2, test: 2 },
            image_size: 8,
            spectral_only_classes: vec![2, 3],
            noise_std: 50.0,
            ..SynthConfig::default()
        }
    }

    fn class_band_mean(records: &[SceneRecord], label: &str, band: BandId) -> f64 {
        let imgs: Vec<_> = records.iter().filter(|r| r.class_labels[0] == label).collect();
        let mut sum = 0f64;
        let mut n = 0usize;
        for r in imgs {
            for &v in r.image.plane(band).unwrap() {
                sum += f64::from(v);
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn noiseless_class_means_equal_signatures() {
        let cfg = SynthConfig {
            num_classes: 2,
            spectral_only_classes: vec![],
            noise_std: 0.0,
            ..small(3)
        };
        let sigs = class_signatures(&cfg).unwrap();
        let recs = generate_synthetic(&cfg).unwrap();
        let names = cfg.class_names();
        for (k, sig) in sigs.iter().enumerate() {
            for (b, band) in cfg.band_set.iter().enumerate() {
                let m = class_band_mean(&recs, &names[k], *band);
                assert!((m - f64::from(sig[b])).abs() < 1e-3 * f64::from(sig[b]), "{m} vs {}", sig[b]);
            }
        }
    }

    #[test]
    fn spectral_only_classes_identical_in_rgb() {
        let cfg = small(11);
        let recs = generate_synthetic(&cfg).unwrap();
        let names = cfg.class_names();
        let split_recs = |k: usize| -> Vec<&SceneRecord> {
            recs.iter().filter(|r| r.class_labels[0] == names[k]).collect()
        };
        let (a, b) = (split_recs(2), split_recs(3));
        for band in BandId::RGB {
            let (ma, mb) = (class_band_mean(&recs, &names[2], band), class_band_mean(&recs, &names[3], band));
            assert!((ma - mb).abs() < 1e-6);
            for (ra, rb) in a.iter().zip(&b) {
                assert_eq!(ra.image.plane(band).unwrap(), rb.image.plane(band).unwrap());
            }
        }
        let d = (class_band_mean(&recs, &names[2], BandId::B11) - class_band_mean(&recs, &names[3], BandId::B11)).abs();
        assert!(d >= 5.0 * f64::from(cfg.noise_std), "B11 separation {d}");
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small(5)).unwrap();
        let b = generate_synthetic(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(6)).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn counts_and_values() {
        let cfg = small(1);
        let recs = generate_synthetic(&cfg).unwrap();
        assert_eq!(recs.len(), 4 * 10);
        assert_eq!(recs.iter().filter(|r| r.split == Split::Train).count(), 24);
        for r in &recs {
            assert!(r.image.values().iter().all(|v| *v >= 0.0 && v.is_finite()));
            assert!(!r.caption.is_empty());
            assert_eq!(r.qa_pairs.len(), 3);
            assert_eq!(r.image.values().len_of(Axis(0)), cfg.band_set.len());
        }
    }

    #[test]
    fn multilabel_scenes_carry_two_labels() {
        let cfg = SynthConfig { multilabel_fraction: 1.0, ..small(2) };
        let recs = generate_synthetic(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.class_labels.len() == 2 && r.class_labels[0] != r.class_labels[1]));
    }

    #[test]
    fn invalid_configs() {
        let bad = SynthConfig { num_classes: 1, ..small(0) };
        assert!(matches!(bad.validate(), Err(DataError::InvalidConfig(m)) if m.contains("num_classes")));
        let bad = SynthConfig { spectral_only_classes: vec![9], ..small(0) };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { band_set: vec![BandId::B2, BandId::B3, BandId::B8], ..small(0) };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { caption_templates: vec![vec!["no slot".into()]], ..small(0) };
        assert!(bad.validate().is_err());
    }
}
