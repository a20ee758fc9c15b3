//! Caption-corpus statistics: n-gram diversity, pairwise lexical overlap,
//! a simplified METEOR, word frequencies and question types.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::normalize_tokens;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("caption has no tokens")]
    EmptyCaption,
    #[error("text has no tokens")]
    EmptyText,
    #[error("corpus has {0} captions, need at least 2")]
    CorpusTooSmall(usize),
    #[error("corpus is empty")]
    EmptyCorpus,
}

pub const DEFAULT_NGRAM_SIZES: [usize; 3] = [1, 2, 3];

pub const STOP_WORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "with", "by", "from", "as", "is",
    "are", "was", "were", "be", "been", "it", "its", "this", "that", "these", "those", "there", "which", "who",
    "what", "where", "how", "can", "do", "does", "has", "have", "some", "any", "into", "over", "under", "between",
    "while", "also", "such", "than", "not",
];

pub const QUESTION_WORDS: [&str; 9] = ["what", "how", "are", "is", "where", "which", "does", "do", "can"];

/// Distinct-to-total n-gram ratio, averaged over the sizes in `ns` for which
/// the caption has at least one n-gram.
pub fn ngram_diversity(caption: &str, ns: &[usize]) -> Result<f64, CorpusError> {
    let tokens = normalize_tokens(caption);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyCaption);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for &n in ns.iter().filter(|&&n| n >= 1 && n <= tokens.len()) {
        let grams: Vec<&[String]> = tokens.windows(n).collect();
        let distinct: HashSet<&[String]> = grams.iter().copied().collect();
        sum += distinct.len() as f64 / grams.len() as f64;
        used += 1;
    }
    if used == 0 {
        return Err(CorpusError::EmptyCaption);
    }
    Ok(sum / used as f64)
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Mean Jaccard overlap of token sets over `sample_pairs` seeded random
/// unordered pairs, or over all pairs when there are no more than that.
pub fn pairwise_similarity<S: AsRef<str>>(corpus: &[S], sample_pairs: usize, seed: u64) -> Result<f64, CorpusError> {
    let n = corpus.len();
    if n < 2 {
        return Err(CorpusError::CorpusTooSmall(n));
    }
    let sets: Vec<HashSet<String>> = corpus.iter().map(|c| normalize_tokens(c.as_ref()).into_iter().collect()).collect();
    let all = n * (n - 1) / 2;
    let (sum, count) = if all <= sample_pairs {
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += jaccard(&sets[i], &sets[j]);
            }
        }
        (s, all)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = 0.0;
        for _ in 0..sample_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            s += jaccard(&sets[i], &sets[j]);
        }
        (s, sample_pairs)
    };
    Ok(sum / count.max(1) as f64)
}

/// The word plus every form with one of the suffixes `ing`, `ed`, `es`, `s` removed.
fn stem_variants(word: &str) -> Vec<&str> {
    let mut v = vec![word];
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.len() >= 2 {
                v.push(stem);
            }
        }
    }
    v
}

fn stems_match(a: &str, b: &str) -> bool {
    let vb = stem_variants(b);
    stem_variants(a).iter().any(|x| vb.contains(x))
}

/// Greedy alignment: exact matches first, then stem matches on the rest.
/// Returns `(candidate index, reference index)` pairs sorted by candidate.
fn align(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pair: Vec<Option<usize>> = vec![None; cand.len()];
    for (i, c) in cand.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *c) {
            used[j] = true;
            pair[i] = Some(j);
        }
    }
    for (i, c) in cand.iter().enumerate() {
        if pair[i].is_some() {
            continue;
        }
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && stems_match(c, &reference[j])) {
            used[j] = true;
            pair[i] = Some(j);
        }
    }
    pair.into_iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect()
}

/// METEOR with exact and suffix-stem matching only:
/// `Fmean = 10PR / (R + 9P)`, `penalty = 0.5 (chunks / m)^3`,
/// `score = Fmean (1 - penalty)`.
pub fn meteor_simplified(candidate: &str, reference: &str) -> Result<f64, CorpusError> {
    let c = normalize_tokens(candidate);
    let r = normalize_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let matches = align(&c, &r);
    let m = matches.len();
    if m == 0 {
        return Ok(0.0);
    }
    let p = m as f64 / c.len() as f64;
    let rec = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    let chunks = 1 + matches.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    Ok(fmean * (1.0 - penalty))
}

/// Non-stop-word token counts, descending, ties in lexicographic order.
pub fn word_frequency<S: AsRef<str>>(corpus: &[S], top_k: usize) -> Result<Vec<(String, usize)>, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in corpus {
        for t in normalize_tokens(c.as_ref()) {
            if !STOP_WORDS.contains(&t.as_str()) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(top_k);
    Ok(v)
}

/// Leading interrogative of a question, or `"other"`.
pub fn question_type(question: &str) -> &'static str {
    let first = normalize_tokens(question).into_iter().next();
    first
        .and_then(|w| QUESTION_WORDS.iter().find(|q| **q == w).copied())
        .unwrap_or("other")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub ngram_sizes: Vec<usize>,
    pub sample_pairs: usize,
    pub seed: u64,
    pub top_k: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            ngram_sizes: DEFAULT_NGRAM_SIZES.to_vec(),
            sample_pairs: 10_000,
            seed: 0,
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_captions: usize,
    /// Mean distinct-to-total ratio per n, over captions with at least n tokens.
    pub ngram_diversity: BTreeMap<usize, f64>,
    pub mean_ngram_diversity: f64,
    pub pairwise_similarity: f64,
    pub top_words: Vec<(String, usize)>,
    pub num_questions: usize,
    pub question_types: BTreeMap<String, usize>,
}

impl CorpusStats {
    /// Plain-text summary with a bar histogram of question types.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "captions: {}", self.num_captions);
        for (n, d) in &self.ngram_diversity {
            let _ = writeln!(s, "{n}-gram diversity: {d:.4}");
        }
        let _ = writeln!(s, "mean n-gram diversity: {:.4}", self.mean_ngram_diversity);
        let _ = writeln!(s, "pairwise similarity: {:.4}", self.pairwise_similarity);
        let _ = writeln!(s, "top words:");
        for (w, c) in &self.top_words {
            let _ = writeln!(s, "  {w:<16} {c}");
        }
        let _ = writeln!(s, "question types ({} questions):", self.num_questions);
        let max = self.question_types.values().copied().max().unwrap_or(0).max(1);
        for (q, c) in &self.question_types {
            let bar = "#".repeat((40 * c).div_ceil(max));
            let _ = writeln!(s, "  {q:<6} {c:>6} {bar}");
        }
        s
    }
}

pub fn corpus_stats<S: AsRef<str>, Q: AsRef<str>>(
    captions: &[S],
    questions: &[Q],
    config: &CorpusConfig,
) -> Result<CorpusStats, CorpusError> {
    if captions.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let tokenized: Vec<Vec<String>> = captions.iter().map(|c| normalize_tokens(c.as_ref())).collect();
    let mut ngram = BTreeMap::new();
    for &n in &config.ngram_sizes {
        let vals: Vec<f64> = captions
            .iter()
            .zip(&tokenized)
            .filter(|(_, t)| n >= 1 && t.len() >= n)
            .map(|(c, _)| ngram_diversity(c.as_ref(), &[n]))
            .collect::<Result<_, _>>()?;
        if !vals.is_empty() {
            ngram.insert(n, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let per_caption: Vec<f64> = captions
        .iter()
        .zip(&tokenized)
        .filter(|(_, t)| !t.is_empty())
        .map(|(c, _)| ngram_diversity(c.as_ref(), &config.ngram_sizes).unwrap_or(0.0))
        .collect();
    let mean_ngram_diversity = if per_caption.is_empty() {
        0.0
    } else {
        per_caption.iter().sum::<f64>() / per_caption.len() as f64
    };
    let pairwise = if captions.len() >= 2 {
        pairwise_similarity(captions, config.sample_pairs, config.seed)?
    } else {
        1.0
    };
    let mut question_types = BTreeMap::new();
    for q in questions {
        *question_types.entry(question_type(q.as_ref()).to_string()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        num_captions: captions.len(),
        ngram_diversity: ngram,
        mean_ngram_diversity,
        pairwise_similarity: pairwise,
        top_words: word_frequency(captions, config.top_k)?,
        num_questions: questions.len(),
        question_types,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diversity_cases() {
        assert_eq!(ngram_diversity("one two three four five", &DEFAULT_NGRAM_SIZES).unwrap(), 1.0);
        let d = ngram_diversity("a a a a", &DEFAULT_NGRAM_SIZES).unwrap();
        assert!((d - 13.0 / 36.0).abs() < 1e-15);
        assert_eq!(ngram_diversity("lake", &DEFAULT_NGRAM_SIZES).unwrap(), 1.0);
        assert_eq!(ngram_diversity(" ... ", &DEFAULT_NGRAM_SIZES), Err(CorpusError::EmptyCaption));
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(pairwise_similarity(&["blue lake", "blue lake"], 10, 0).unwrap(), 1.0);
        assert_eq!(pairwise_similarity(&["red roof", "green field"], 10, 0).unwrap(), 0.0);
        assert!((pairwise_similarity(&["blue lake", "blue sky"], 10, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pairwise_similarity(&["x"], 10, 0), Err(CorpusError::CorpusTooSmall(1)));
        let c = ["a b", "a c", "b c", "a b c", "d"];
        let sampled = pairwise_similarity(&c, 3, 7).unwrap();
        assert_eq!(sampled, pairwise_similarity(&c, 3, 7).unwrap());
        assert!((0.0..=1.0).contains(&sampled));
    }

    #[test]
    fn meteor_cases() {
        let s = "one two three four five six seven eight nine ten";
        assert!((meteor_simplified(s, s).unwrap() - 0.9995).abs() < 1e-12);
        assert_eq!(meteor_simplified("red roof", "green field").unwrap(), 0.0);
        assert!((meteor_simplified("lake", "lake").unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(meteor_simplified("", "x"), Err(CorpusError::EmptyText));
    }

    #[test]
    fn meteor_stem_and_chunks() {
        // "rivers" ~ "river" by stem; two chunks: (the river) / (flows)
        let a = meteor_simplified("the rivers flows", "the river quickly flows").unwrap();
        let (m, p, r) = (3.0, 1.0, 0.75);
        let fmean = 10.0 * p * r / (r + 9.0 * p);
        let expected = fmean * (1.0 - 0.5 * (2.0f64 / m).powi(3));
        assert!((a - expected).abs() < 1e-12, "{a} vs {expected}");
        assert!(stems_match("lakes", "lake"));
        assert!(stems_match("flooded", "flood"));
        assert!(!stems_match("is", "i"));
    }

    #[test]
    fn word_frequency_cases() {
        assert_eq!(
            word_frequency(&["lake lake river"], 10).unwrap(),
            vec![("lake".to_string(), 2), ("river".to_string(), 1)]
        );
        assert!(word_frequency(&["the of and a"], 10).unwrap().is_empty());
        assert_eq!(word_frequency(&["road field crop"], 2).unwrap(), vec![("crop".to_string(), 1), ("field".to_string(), 1)]);
        assert_eq!(word_frequency::<&str>(&[], 2), Err(CorpusError::EmptyCorpus));
    }

    #[test]
    fn question_types() {
        assert_eq!(question_type("What is the dominant land cover?"), "what");
        assert_eq!(question_type("Name the largest feature."), "other");
        assert_eq!(question_type("HOW many rivers are there?"), "how");
        assert_eq!(question_type(""), "other");
    }

    #[test]
    fn stats_summary() {
        let caps = ["a forest near a river", "a forest near a river", "urban area with roads"];
        let qs = ["What is shown?", "Is there water?", "Count the roads."];
        let s = corpus_stats(&caps, &qs, &CorpusConfig::default()).unwrap();
        assert_eq!(s.num_captions, 3);
        assert_eq!(s.question_types.values().sum::<usize>(), 3);
        assert_eq!(s.question_types["other"], 1);
        assert!(s.ngram_diversity.values().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.render().contains("question types"));
    }

    proptest! {
        #[test]
        fn diversity_ignores_case(words in proptest::collection::vec("[a-c]{1,3}", 1..12)) {
            let lower = words.join(" ");
            let upper = lower.to_uppercase();
            prop_assert_eq!(
                ngram_diversity(&lower, &DEFAULT_NGRAM_SIZES).unwrap(),
                ngram_diversity(&upper, &DEFAULT_NGRAM_SIZES).unwrap()
            );
        }

        #[test]
        fn self_meteor_at_least_half(words in proptest::collection::vec("[a-d]{1,4}", 1..15)) {
            let t = words.join(" ");
            let s = meteor_simplified(&t, &t).unwrap();
            prop_assert!((0.5..=1.0).contains(&s));
        }

        #[test]
        fn metrics_in_unit_interval(a in "[a-e ]{1,30}", b in "[a-e ]{1,30}") {
            if let Ok(s) = meteor_simplified(&a, &b) {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            if let Ok(d) = ngram_diversity(&a, &DEFAULT_NGRAM_SIZES) {
                prop_assert!((0.0..=1.0).contains(&d));
            }
            let s = pairwise_similarity(&[a.as_str(), b.as_str()], 5, 1).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
