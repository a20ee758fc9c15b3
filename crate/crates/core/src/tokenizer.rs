//! Lowercase word-level tokenizer with a frequency-ranked vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
pub const DEFAULT_CONTEXT_LENGTH: usize = 77;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("max_size {0} leaves no room beyond the 4 special tokens")]
    MaxSizeTooSmall(usize),
    #[error("vocabulary file is malformed: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Splits on whitespace, lowercases, and trims non-alphanumeric characters from
/// both ends of every word. Intra-word hyphens and apostrophes survive.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Keeps the `max_size - 4` most frequent words; ties go to the
    /// lexicographically smaller word.
    pub fn build<I, S>(corpus: I, max_size: usize) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size <= SPECIALS.len() {
            return Err(TokenizerError::MaxSizeTooSmall(max_size));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut docs = 0usize;
        for text in corpus {
            docs += 1;
            for t in normalize_tokens(text.as_ref()) {
                *counts.entry(t).or_default() += 1;
            }
        }
        if docs == 0 {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// `[BOS, tokens.., EOS, PAD..]`, truncated to fit `context_length`.
    pub fn encode(&self, text: &str, context_length: usize) -> Vec<u32> {
        assert!(context_length >= 2, "context_length must hold BOS and EOS");
        let mut ids = Vec::with_capacity(context_length);
        ids.push(BOS);
        ids.extend(
            normalize_tokens(text)
                .iter()
                .take(context_length - 2)
                .map(|t| self.id(t)),
        );
        ids.push(EOS);
        ids.resize(context_length, PAD);
        ids
    }

    /// Tokens between BOS and the first EOS.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .skip_while(|&&i| i == BOS)
            .take_while(|&&i| i != EOS)
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// One token per line in id order.
    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(TokenizerError::Malformed(
                "first four lines must be the special tokens".into(),
            ));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(TokenizerError::Malformed("duplicate token".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocabulary::build(["a a b"], 100).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        let v = Vocabulary::build(["beta alpha"], 100).unwrap();
        assert!(v.id("alpha") < v.id("beta"));
    }

    #[test]
    fn truncated_vocab_maps_rest_to_unk() {
        let corpus = ["w0 w0 w0 w0 w0 w0 w0 w0 w0 w1 w1 w1 w1 w1 w1 w1 w1 w2 w2 w2 w2 w2 w2 w2 w3 w3 w3 w3 w3 w3 w4 w4 w4 w4 w4 w5 w5 w5 w5 w6 w6 w6 w7 w7 w8 w9"];
        let v = Vocabulary::build(corpus, 8).unwrap();
        assert_eq!(v.len(), 8);
        for (i, w) in ["w0", "w1", "w2", "w3"].iter().enumerate() {
            assert_eq!(v.id(w), 4 + i as u32);
        }
        for w in ["w4", "w5", "w9"] {
            assert_eq!(v.id(w), UNK);
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_tokens("  The Lake, (north-east) shore!! "),
            vec!["the", "lake", "north-east", "shore"]
        );
        assert!(normalize_tokens("... !!").is_empty());
    }

    #[test]
    fn encode_layouts() {
        let v = Vocabulary::build(["lake river"], 100).unwrap();
        let e = v.encode("", 77);
        assert_eq!(e.len(), 77);
        assert_eq!(&e[..2], &[BOS, EOS]);
        assert!(e[2..].iter().all(|&i| i == PAD));

        let e = v.encode("lake glacier", 77);
        assert_eq!(&e[..4], &[BOS, v.id("lake"), UNK, EOS]);

        let long: String = (0..100).map(|_| "lake ").collect();
        let e = v.encode(&long, 77);
        assert_eq!(e[0], BOS);
        assert!(e[1..76].iter().all(|&i| i == v.id("lake")));
        assert_eq!(e[76], EOS);
        assert_eq!(e.iter().filter(|&&i| i == EOS).count(), 1);
    }

    #[test]
    fn empty_corpus() {
        let empty: [&str; 0] = [];
        assert!(matches!(Vocabulary::build(empty, 10), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["one two two three"], 50).unwrap();
        v.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<pad>\n<bos>\n<eos>\n<unk>\ntwo\n"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-z]{1,6}", 0..20)) {
            let text = words.join(" ");
            let v = Vocabulary::build([text.as_str(), "filler"], 1000).unwrap();
            let ids = v.encode(&text, 77);
            prop_assert_eq!(v.decode(&ids), normalize_tokens(&text));
            prop_assert_eq!(ids.clone(), v.encode(&text, 77));
        }
    }
}
