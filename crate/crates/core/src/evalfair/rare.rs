use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency range `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBucket {
    pub lo: usize,
    pub hi: usize,
}

impl FrequencyBucket {
    pub fn contains(&self, f: usize) -> bool {
        (self.lo..self.hi).contains(&f)
    }

    pub fn label(&self) -> String {
        if self.hi == self.lo + 1 {
            self.lo.to_string()
        } else {
            format!("[{},{})", self.lo, self.hi)
        }
    }
}

/// Buckets 1, 2, 3, 4, [5,10), [10,100), [100,1000).
pub fn default_buckets() -> Vec<FrequencyBucket> {
    [(1, 2), (2, 3), (3, 4), (4, 5), (5, 10), (10, 100), (100, 1000)]
        .into_iter()
        .map(|(lo, hi)| FrequencyBucket { lo, hi })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: FrequencyBucket,
    /// Reference occurrences whose word falls in the bucket.
    pub occurrences: usize,
    pub matched: usize,
    /// `None` when the bucket holds no reference word.
    pub accuracy: Option<f64>,
}

/// Per-bucket recall of reference words: an occurrence counts as translated when the paired
/// hypothesis contains the word, each hypothesis occurrence matching at most one reference
/// occurrence. Words are whitespace tokens compared case-sensitively; reference words
/// missing from `freq` belong to no bucket.
pub fn rare_word_accuracy<S: AsRef<str>, T: AsRef<str>>(
    hypotheses: &[S],
    references: &[T],
    freq: &HashMap<String, usize>,
    buckets: &[FrequencyBucket],
) -> Result<Vec<BucketAccuracy>> {
    if hypotheses.len() != references.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            found: hypotheses.len(),
        });
    }
    if buckets.iter().any(|b| b.lo >= b.hi) {
        return Err(Error::invalid("frequency bucket with empty range"));
    }
    let mut occ = vec![0usize; buckets.len()];
    let mut hit = vec![0usize; buckets.len()];
    for (h, r) in hypotheses.iter().zip(references) {
        let mut hyp: HashMap<&str, usize> = HashMap::new();
        for w in h.as_ref().split_whitespace() {
            *hyp.entry(w).or_insert(0) += 1;
        }
        for w in r.as_ref().split_whitespace() {
            let Some(&f) = freq.get(w) else { continue };
            let Some(b) = buckets.iter().position(|b| b.contains(f)) else { continue };
            occ[b] += 1;
            if let Some(c) = hyp.get_mut(w).filter(|c| **c > 0) {
                *c -= 1;
                hit[b] += 1;
            }
        }
    }
    Ok(buckets
        .iter()
        .zip(occ.iter().zip(&hit))
        .map(|(&bucket, (&o, &m))| BucketAccuracy {
            bucket,
            occurrences: o,
            matched: m,
            accuracy: (o > 0).then(|| m as f64 / o as f64),
        })
        .collect())
}

/// Whitespace-token counts of a corpus.
pub fn frequency_table<S: AsRef<str>>(sentences: &[S]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for s in sentences {
        for w in s.as_ref().split_whitespace() {
            *m.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    m
}
