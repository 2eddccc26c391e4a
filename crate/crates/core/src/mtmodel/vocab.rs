use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
pub const NUM_SPECIALS: usize = SPECIALS.len();

/// Token ↔ id map with the reserved entries at ids `0..4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials first, then `tokens` in order of first appearance. Reserved names in
    /// `tokens` are skipped.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIALS.iter().map(|s| s.to_string()) {
            v.push(t);
        }
        for t in tokens {
            let t = t.as_ref();
            if !v.index.contains_key(t) {
                v.push(t.to_string());
            }
        }
        v
    }

    /// Vocabulary of every whitespace token in `sentences`, sorted for stability.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[S]) -> Self {
        let mut all: Vec<&str> = sentences.iter().flat_map(|s| s.as_ref().split_whitespace()).collect();
        all.sort_unstable();
        all.dedup();
        Vocab::new(all)
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Ids of whitespace tokens. Unknown tokens map to `<unk>` when `map_unknown`, and are an
    /// error otherwise.
    pub fn encode(&self, sentence: &str, map_unknown: bool) -> Result<Vec<usize>> {
        sentence
            .split_whitespace()
            .map(|t| match self.id(t) {
                Some(i) => Ok(i),
                None if map_unknown => Ok(UNK),
                None => Err(Error::UnknownToken(t.to_string())),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first_and_are_not_duplicated() {
        let v = Vocab::new(["b", "</s>", "a", "b"]);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "<s>", "</s>", "b", "a"]);
        assert_eq!(v.id("</s>"), Some(EOS));
    }

    #[test]
    fn encode_strict_and_lenient() {
        let v = Vocab::from_sentences(&["x y", "y z"]);
        assert_eq!(v.encode("z x", false).unwrap(), vec![6, 4]);
        assert!(v.encode("q", false).is_err());
        assert_eq!(v.encode("q x", true).unwrap(), vec![UNK, 4]);
    }
}
