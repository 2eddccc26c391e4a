//! Byte pair encoding: merge learning over word-frequency tables and segmentation with a
//! trailing continuation marker on every non-final piece of a word.
//!
//! Words are split on whitespace and start as sequences of Unicode scalar values. No
//! end-of-word symbol is appended; word boundaries are carried by the marker instead.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::textproc::MonoCorpus;

pub const DEFAULT_MARKER: &str = "@@";
pub const CODES_HEADER: &str = "#version: varmt-bpe-1";

type Pair = (String, String);

/// Ordered merge rules.
#[derive(Debug, Clone)]
pub struct BpeCodes {
    merges: Vec<Pair>,
    marker: String,
    ranks: HashMap<Pair, usize>,
}

impl PartialEq for BpeCodes {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.marker == other.marker
    }
}

impl BpeCodes {
    pub fn new(merges: Vec<(String, String)>, marker: &str) -> Result<Self> {
        if marker.is_empty() {
            return Err(Error::invalid("continuation marker must be non-empty"));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if pair.0.is_empty() || pair.1.is_empty() {
                return Err(Error::invalid(format!("merge {rank} has an empty side")));
            }
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::invalid(format!("duplicate merge {} {}", pair.0, pair.1)));
            }
        }
        Ok(BpeCodes {
            merges,
            marker: marker.to_string(),
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Segments a single word into its subword pieces, without markers.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        symbols
    }

    /// Writes the codes file: a version header, then one `left right` merge per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{CODES_HEADER}")?;
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == CODES_HEADER => {}
            other => {
                return Err(Error::format(
                    "BPE codes",
                    path,
                    format!("expected header {CODES_HEADER:?}, found {other:?}"),
                ))
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::format(
                        "BPE codes",
                        path,
                        format!("line {} is not `left right`: {line:?}", i + 2),
                    ))
                }
            }
        }
        BpeCodes::new(merges, DEFAULT_MARKER)
    }
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// One piece of a segmented word. Non-final pieces end with the continuation marker.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubwordToken {
    surface: String,
    stem_len: usize,
}

impl SubwordToken {
    pub fn parse(surface: &str, marker: &str) -> Self {
        let stem_len = match surface.strip_suffix(marker) {
            Some(stem) if !stem.is_empty() => stem.len(),
            _ => surface.len(),
        };
        SubwordToken {
            surface: surface.to_string(),
            stem_len,
        }
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    /// The surface with the continuation marker removed.
    pub fn stem(&self) -> &str {
        &self.surface[..self.stem_len]
    }

    pub fn is_continuation(&self) -> bool {
        self.stem_len < self.surface.len()
    }
}

/// Sennrich-style merge learning: repeatedly merge the most frequent adjacent symbol pair.
/// Ties go to the lexicographically smallest `(left, right)`. Learning stops early if no
/// adjacent pair remains, in which case fewer than `num_merges` rules are returned.
pub fn learn_bpe(corpus: &MonoCorpus, num_merges: usize) -> Result<BpeCodes> {
    learn_from_words(corpus.words(), num_merges)
}

/// Merge learning over the concatenation of a standard-language and a variety corpus.
pub fn learn_joint_bpe(std: &MonoCorpus, tgt: &MonoCorpus, num_merges: usize) -> Result<BpeCodes> {
    if std.has_no_words() || tgt.has_no_words() {
        return Err(Error::Empty("joint BPE needs both corpora to contain words"));
    }
    learn_from_words(std.words().chain(tgt.words()), num_merges)
}

struct WordEntry {
    symbols: Vec<String>,
    freq: i64,
}

struct PairStats {
    counts: HashMap<Pair, i64>,
    queue: BTreeSet<(Reverse<i64>, Pair)>,
    occurs_in: HashMap<Pair, HashSet<usize>>,
}

impl PairStats {
    fn adjust(&mut self, pair: &Pair, delta: i64, word: usize) {
        let count = self.counts.entry(pair.clone()).or_insert(0);
        if *count > 0 {
            self.queue.remove(&(Reverse(*count), pair.clone()));
        }
        *count += delta;
        if *count > 0 {
            self.queue.insert((Reverse(*count), pair.clone()));
        }
        if delta > 0 {
            self.occurs_in.entry(pair.clone()).or_default().insert(word);
        }
    }
}

fn learn_from_words<'a>(words: impl Iterator<Item = &'a str>, num_merges: usize) -> Result<BpeCodes> {
    let mut freqs: HashMap<&str, i64> = HashMap::new();
    for w in words {
        *freqs.entry(w).or_insert(0) += 1;
    }
    if freqs.is_empty() {
        return Err(Error::Empty("BPE learning corpus has no words"));
    }
    let mut vocab: Vec<(&str, i64)> = freqs.into_iter().collect();
    vocab.sort_unstable();
    let mut entries: Vec<WordEntry> = vocab
        .into_iter()
        .map(|(w, freq)| WordEntry {
            symbols: w.chars().map(String::from).collect(),
            freq,
        })
        .collect();

    let mut stats = PairStats {
        counts: HashMap::new(),
        queue: BTreeSet::new(),
        occurs_in: HashMap::new(),
    };
    for (id, entry) in entries.iter().enumerate() {
        for w in entry.symbols.windows(2) {
            stats.adjust(&(w[0].clone(), w[1].clone()), entry.freq, id);
        }
    }

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let Some((_, best)) = stats.queue.first().cloned() else {
            break;
        };
        let mut touched: Vec<usize> = stats
            .occurs_in
            .get(&best)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        touched.sort_unstable();
        for id in touched {
            let entry = &entries[id];
            if !entry
                .symbols
                .windows(2)
                .any(|w| w[0] == best.0 && w[1] == best.1)
            {
                continue;
            }
            let merged = merge_pair(&entry.symbols, &best.0, &best.1);
            let freq = entry.freq;
            for w in entry.symbols.windows(2) {
                stats.adjust(&(w[0].clone(), w[1].clone()), -freq, id);
            }
            for w in merged.windows(2) {
                stats.adjust(&(w[0].clone(), w[1].clone()), freq, id);
            }
            entries[id].symbols = merged;
        }
        stats.occurs_in.remove(&best);
        merges.push(best);
    }
    BpeCodes::new(merges, DEFAULT_MARKER)
}

/// Segments every whitespace-delimited word of `sentence`.
pub fn apply_bpe(codes: &BpeCodes, sentence: &str) -> Vec<SubwordToken> {
    let mut out = Vec::new();
    for word in sentence.split_whitespace() {
        push_word(codes, &codes.segment_word(word), &mut out);
    }
    out
}

fn push_word(codes: &BpeCodes, pieces: &[String], out: &mut Vec<SubwordToken>) {
    let last = pieces.len().saturating_sub(1);
    for (i, piece) in pieces.iter().enumerate() {
        let stem_len = piece.len();
        let surface = if i < last {
            format!("{piece}{}", codes.marker)
        } else {
            piece.clone()
        };
        out.push(SubwordToken { surface, stem_len });
    }
}

/// Segments a whole corpus, memoizing per-word segmentations. Returns the token surfaces.
pub fn apply_bpe_corpus(codes: &BpeCodes, sentences: &[String]) -> Vec<Vec<String>> {
    let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
    sentences
        .iter()
        .map(|s| {
            let mut tokens = Vec::new();
            for word in s.split_whitespace() {
                let pieces = cache.entry(word).or_insert_with(|| codes.segment_word(word));
                let mut buf = Vec::with_capacity(pieces.len());
                push_word(codes, pieces, &mut buf);
                tokens.extend(buf.into_iter().map(|t| t.surface));
            }
            tokens
        })
        .collect()
}

/// Inverse of [`apply_bpe`]: glues continuation pieces to their successor and joins words
/// with single spaces.
pub fn restore_bpe(tokens: &[SubwordToken]) -> Result<String> {
    let mut out = String::new();
    let mut open = false;
    for tok in tokens {
        if !open && !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tok.stem());
        open = tok.is_continuation();
    }
    if open {
        return Err(Error::DanglingContinuation(
            tokens.last().map(|t| t.surface.clone()).unwrap_or_default(),
        ));
    }
    Ok(out)
}

/// Restores a sequence of raw surfaces produced by a decoder, dropping a dangling marker on
/// the final piece instead of failing.
pub fn restore_surfaces_lenient<S: AsRef<str>>(surfaces: &[S], marker: &str) -> String {
    let mut tokens: Vec<SubwordToken> = surfaces
        .iter()
        .map(|s| SubwordToken::parse(s.as_ref(), marker))
        .collect();
    if let Some(last) = tokens.last_mut() {
        last.surface.truncate(last.stem_len);
    }
    restore_bpe(&tokens).expect("final piece carries no marker")
}
