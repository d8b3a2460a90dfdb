use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const RESERVED: [&str; 3] = [BOS, EOS, UNK];

/// Word-level vocabulary. Ids 0, 1, 2 are `<bos>`, `<eos>`, `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Tokenizer {
    /// Reserved tokens followed by the `max_vocab - 3` most frequent corpus
    /// tokens, ties broken lexicographically.
    pub fn build(corpus: &Dataset, max_vocab: usize) -> Result<Self> {
        if max_vocab < 4 {
            return Err(Error::InvalidArgument(format!(
                "max_vocab {max_vocab} leaves no room beside the 3 reserved tokens"
            )));
        }
        if corpus.is_empty() {
            return Err(Error::Empty("tokenizer corpus".into()));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for e in corpus.examples() {
            for t in &e.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - RESERVED.len());
        Self::from_vocab(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        )
    }

    pub fn from_vocab(vocab: Vec<String>) -> Result<Self> {
        if vocab.len() < RESERVED.len() || vocab[..3] != RESERVED {
            return Err(Error::ModelFormat(
                "vocab must start with <bos>, <eos>, <unk>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(vocab.len());
        for (i, t) in vocab.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::ModelFormat(format!("duplicate vocab entry `{t}`")));
            }
        }
        Ok(Self { vocab, ids })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.vocab.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab(content.lines().map(String::from).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledExample, Provenance};
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Dataset {
        Dataset::new(
            texts
                .iter()
                .map(|t| {
                    LabeledExample::from_tokens(t.split_whitespace().map(String::from).collect(), "x")
                })
                .collect(),
            Provenance::Original,
        )
    }

    #[test]
    fn frequency_then_lexicographic() {
        let tok = Tokenizer::build(&corpus(&["a b", "a c"]), 6).unwrap();
        assert_eq!(tok.vocab(), ["<bos>", "<eos>", "<unk>", "a", "b", "c"]);
        let small = Tokenizer::build(&corpus(&["a b", "a c"]), 5).unwrap();
        assert_eq!(small.vocab(), ["<bos>", "<eos>", "<unk>", "a", "b"]);
        assert!(Tokenizer::build(&corpus(&["a"]), 3).is_err());
    }

    #[test]
    fn oov_maps_to_unk() {
        let tok = Tokenizer::build(&corpus(&["a b", "a c"]), 6).unwrap();
        assert_eq!(tok.encode(&["a", "z"]), vec![3, UNK_ID]);
    }

    #[test]
    fn file_roundtrip() {
        let tok = Tokenizer::build(&corpus(&["x y z y"]), 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        tok.save(&p).unwrap();
        assert_eq!(Tokenizer::load(&p).unwrap(), tok);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn in_vocab_roundtrip(idx in prop::collection::vec(0usize..26, 0..20)) {
            let letters: Vec<String> = (b'a'..=b'z').map(|c| (c as char).to_string()).collect();
            let tok = Tokenizer::build(&corpus(&[&letters.join(" ")]), 64).unwrap();
            let text: Vec<String> = idx.iter().map(|&i| letters[i].clone()).collect();
            prop_assert_eq!(tok.decode(&tok.encode(&text)), text);
        }
    }
}
