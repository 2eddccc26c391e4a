use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An ordered list of sentences in one language or variety.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoCorpus {
    pub sentences: Vec<String>,
    pub language_tag: String,
}

impl MonoCorpus {
    pub fn new(language_tag: impl Into<String>, sentences: Vec<String>) -> Result<Self> {
        if let Some(bad) = sentences.iter().find(|s| s.contains('\n')) {
            return Err(Error::invalid(format!("sentence contains a newline: {bad:?}")));
        }
        Ok(MonoCorpus {
            sentences,
            language_tag: language_tag.into(),
        })
    }

    pub fn from_strs<S: AsRef<str>>(language_tag: &str, sentences: &[S]) -> Result<Self> {
        Self::new(
            language_tag,
            sentences.iter().map(|s| s.as_ref().to_string()).collect(),
        )
    }

    /// Reads a UTF-8 file with one sentence per line. Carriage returns are stripped.
    pub fn read(path: impl AsRef<Path>, language_tag: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let sentences = text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect();
        Ok(MonoCorpus {
            sentences,
            language_tag: language_tag.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path, &self.sentences)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// True when no sentence has a single whitespace-delimited word.
    pub fn has_no_words(&self) -> bool {
        self.sentences.iter().all(|s| s.split_whitespace().next().is_none())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.split_whitespace())
    }
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for line in lines {
        out.write_all(line.as_ref().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Gold,
    Pseudo,
}

/// Aligned sentence pairs. Either side may hold raw or BPE-segmented text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(String, String)>,
    pub origin: Origin,
}

impl ParallelCorpus {
    /// Rejects pairs with an empty (whitespace-only) side or embedded newlines.
    pub fn new(pairs: Vec<(String, String)>, origin: Origin) -> Result<Self> {
        for (i, (s, t)) in pairs.iter().enumerate() {
            if s.trim().is_empty() || t.trim().is_empty() {
                return Err(Error::invalid(format!("pair {i} has an empty side")));
            }
            if s.contains('\n') || t.contains('\n') {
                return Err(Error::invalid(format!("pair {i} contains a newline")));
            }
        }
        Ok(ParallelCorpus { pairs, origin })
    }

    pub fn from_sides(src: &MonoCorpus, tgt: &MonoCorpus, origin: Origin) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::DimensionMismatch {
                expected: src.len(),
                found: tgt.len(),
            });
        }
        Self::new(
            src.sentences.iter().cloned().zip(tgt.sentences.iter().cloned()).collect(),
            origin,
        )
    }

    /// Reads two line-aligned files.
    pub fn read(src: impl AsRef<Path>, tgt: impl AsRef<Path>, origin: Origin) -> Result<Self> {
        let (sp, tp) = (src.as_ref(), tgt.as_ref());
        let s = MonoCorpus::read(sp, "src")?;
        let t = MonoCorpus::read(tp, "tgt")?;
        if s.len() != t.len() {
            return Err(Error::format(
                "parallel corpus",
                tp,
                format!("{} lines against {} in {}", t.len(), s.len(), sp.display()),
            ));
        }
        Self::from_sides(&s, &t, origin)
    }

    pub fn write(&self, src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<()> {
        let (s, t): (Vec<&str>, Vec<&str>) = self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).unzip();
        write_lines(src, &s)?;
        write_lines(tgt, &t)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same pairs with sides exchanged.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            origin: self.origin,
        }
    }

    pub fn src_side(&self, tag: &str) -> MonoCorpus {
        MonoCorpus {
            sentences: self.pairs.iter().map(|p| p.0.clone()).collect(),
            language_tag: tag.to_string(),
        }
    }

    pub fn tgt_side(&self, tag: &str) -> MonoCorpus {
        MonoCorpus {
            sentences: self.pairs.iter().map(|p| p.1.clone()).collect(),
            language_tag: tag.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_embedded_newlines() {
        assert!(MonoCorpus::from_strs("std", &["a\nb"]).is_err());
    }

    #[test]
    fn file_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let corpus = MonoCorpus::from_strs("tgt", &["привіт світ", "", "b a"]).unwrap();
        corpus.write(&path).unwrap();
        let back = MonoCorpus::read(&path, "tgt").unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn parallel_rejects_empty_sides() {
        let p = vec![("a".to_string(), " ".to_string())];
        assert!(ParallelCorpus::new(p, Origin::Gold).is_err());
    }

    #[test]
    fn parallel_file_round_trip_and_reverse() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("x.src"), dir.path().join("x.tgt"));
        let p = ParallelCorpus::new(vec![("a b".into(), "в г".into()), ("c".into(), "д".into())], Origin::Pseudo).unwrap();
        p.write(&s, &t).unwrap();
        assert_eq!(ParallelCorpus::read(&s, &t, Origin::Pseudo).unwrap(), p);
        assert_eq!(p.reversed().pairs[0], ("в г".to_string(), "a b".to_string()));
        write_lines(&t, &["в г"]).unwrap();
        assert!(ParallelCorpus::read(&s, &t, Origin::Pseudo).is_err());
    }
}
