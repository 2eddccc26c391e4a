//! Subword skip-gram embeddings with hashed character n-gram buckets.
//!
//! A token's composed vector is the mean of its dedicated input row and the bucket rows of
//! its character n-grams (markers stripped, `<`/`>` boundaries added). Exported vectors are
//! the composed vectors scaled to unit norm by [`finalize`].

mod io;
mod train;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{char_ngrams, SubwordToken, DEFAULT_MARKER};

pub use io::{read_text_vectors, TextVectors, BINARY_MAGIC};
pub use train::train_embeddings;

/// Seed used for the dedicated rows of tokens that [`transfer_init`] cannot copy.
pub const TRANSFER_SEED: u64 = 0x7472_616e_7366_6572;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub bucket_count: usize,
    pub min_count: u64,
    pub min_n: usize,
    pub max_n: usize,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.05,
            bucket_count: 2_000_000,
            min_count: 1,
            min_n: 3,
            max_n: 6,
            seed: 1,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("negatives", self.negatives),
            ("bucket_count", self.bucket_count),
            ("min_n", self.min_n),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("skip-gram {name} must be positive")));
        }
        if self.min_n > self.max_n {
            return Err(Error::invalid("skip-gram min_n exceeds max_n"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("skip-gram learning rate must be positive"));
        }
        if self.bucket_count > u32::MAX as usize {
            return Err(Error::invalid("bucket count does not fit in 32 bits"));
        }
        Ok(())
    }
}

/// Unit-norm exported vectors, present once a model is finalized.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Exported {
    pub(crate) vectors: Vec<f32>,
    pub(crate) zero_flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub(crate) dim: usize,
    pub(crate) min_n: usize,
    pub(crate) max_n: usize,
    pub(crate) bucket_count: usize,
    pub(crate) vocab: Vec<String>,
    pub(crate) index: HashMap<String, usize>,
    pub(crate) counts: Vec<u64>,
    pub(crate) subwords: Vec<Vec<u32>>,
    pub(crate) token_vectors: Vec<f32>,
    pub(crate) context_vectors: Vec<f32>,
    pub(crate) buckets: Vec<f32>,
    pub(crate) exported: Option<Exported>,
}

/// 32-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub(crate) fn subword_ids(token: &str, min_n: usize, max_n: usize, bucket_count: usize) -> Vec<u32> {
    let stem = SubwordToken::parse(token, DEFAULT_MARKER);
    match char_ngrams(stem.stem(), min_n, max_n) {
        Ok(grams) => grams
            .iter()
            .map(|g| (fnv1a(g) as u64 % bucket_count as u64) as u32)
            .collect(),
        Err(_) => Vec::new(),
    }
}

pub(crate) fn init_scale(dim: usize) -> f32 {
    1.0 / (2.0 * dim as f32)
}

pub(crate) fn token_rng(seed: u64, token: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((fnv1a(token) as u64) << 17) ^ token.len() as u64)
}

pub(crate) fn fill_uniform(rng: &mut impl Rng, out: &mut [f32], scale: f32) {
    for v in out {
        *v = rng.gen_range(-scale..=scale);
    }
}

impl EmbeddingModel {
    /// A model over `vocab` with default-initialized rows: dedicated token rows and buckets
    /// uniform in `[-1/(2d), 1/(2d)]`, context rows zero.
    pub(crate) fn fresh(vocab: Vec<String>, counts: Vec<u64>, config: &SkipgramConfig) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::Empty("embedding vocabulary"));
        }
        let dim = config.dim;
        let scale = init_scale(dim);
        let mut buckets = vec![0.0f32; config.bucket_count * dim];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        fill_uniform(&mut rng, &mut buckets, scale);
        let mut token_vectors = vec![0.0f32; vocab.len() * dim];
        for (row, tok) in token_vectors.chunks_mut(dim).zip(&vocab) {
            fill_uniform(&mut token_rng(config.seed, tok), row, scale);
        }
        Self::assemble(
            dim,
            config.min_n,
            config.max_n,
            config.bucket_count,
            vocab,
            counts,
            token_vectors,
            None,
            buckets,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        dim: usize,
        min_n: usize,
        max_n: usize,
        bucket_count: usize,
        vocab: Vec<String>,
        counts: Vec<u64>,
        token_vectors: Vec<f32>,
        context_vectors: Option<Vec<f32>>,
        buckets: Vec<f32>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        let subwords = vocab
            .iter()
            .map(|t| subword_ids(t, min_n, max_n, bucket_count))
            .collect();
        let n = vocab.len();
        Ok(EmbeddingModel {
            dim,
            min_n,
            max_n,
            bucket_count,
            vocab,
            index,
            counts,
            subwords,
            token_vectors,
            context_vectors: context_vectors.unwrap_or_else(|| vec![0.0; n * dim]),
            buckets,
            exported: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ngram_range(&self) -> (usize, usize) {
        (self.min_n, self.max_n)
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn is_finalized(&self) -> bool {
        self.exported.is_some()
    }

    pub fn token_row(&self, index: usize) -> &[f32] {
        &self.token_vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn bucket_row(&self, bucket: usize) -> &[f32] {
        &self.buckets[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn subword_buckets(&self, index: usize) -> &[u32] {
        &self.subwords[index]
    }

    /// Mean of the token's dedicated row and its n-gram bucket rows (not normalized).
    pub fn composed(&self, index: usize) -> Vec<f32> {
        let mut out = self.token_row(index).to_vec();
        let subs = &self.subwords[index];
        for &b in subs {
            for (o, v) in out.iter_mut().zip(self.bucket_row(b as usize)) {
                *o += v;
            }
        }
        let n = (1 + subs.len()) as f32;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Mean of the bucket rows of an arbitrary surface; `None` when it has no n-grams.
    pub fn compose_oov(&self, surface: &str) -> Option<Vec<f32>> {
        let subs = subword_ids(surface, self.min_n, self.max_n, self.bucket_count);
        if subs.is_empty() {
            return None;
        }
        let mut out = vec![0.0f32; self.dim];
        for &b in &subs {
            for (o, v) in out.iter_mut().zip(self.bucket_row(b as usize)) {
                *o += v;
            }
        }
        let n = subs.len() as f32;
        out.iter_mut().for_each(|v| *v /= n);
        Some(out)
    }

    /// Unit-norm exported vector of a finalized model.
    pub fn vector(&self, index: usize) -> Option<&[f32]> {
        self.exported
            .as_ref()
            .map(|e| &e.vectors[index * self.dim..(index + 1) * self.dim])
    }

    pub fn vector_of(&self, token: &str) -> Option<&[f32]> {
        self.token_index(token).and_then(|i| self.vector(i))
    }

    /// Indices whose composed vector was zero and got replaced by `e1` during finalize.
    pub fn zero_vector_tokens(&self) -> Vec<usize> {
        self.exported
            .as_ref()
            .map(|e| (0..e.zero_flags.len()).filter(|&i| e.zero_flags[i]).collect())
            .unwrap_or_default()
    }

    pub(crate) fn exported_matrix(&self) -> Result<&[f32]> {
        self.exported
            .as_ref()
            .map(|e| e.vectors.as_slice())
            .ok_or_else(|| Error::invalid("embedding model is not finalized"))
    }

    /// Rotates every stored table by `w` (row vectors times a `dim x dim` matrix).
    pub(crate) fn transform_rows(&mut self, w: &[f64]) {
        let d = self.dim;
        let apply = |data: &mut [f32]| {
            let mut tmp = vec![0.0f64; d];
            for row in data.chunks_mut(d) {
                tmp.iter_mut().for_each(|v| *v = 0.0);
                for (i, &x) in row.iter().enumerate() {
                    let x = x as f64;
                    for (t, &wij) in tmp.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                        *t += x * wij;
                    }
                }
                for (r, t) in row.iter_mut().zip(&tmp) {
                    *r = *t as f32;
                }
            }
        };
        apply(&mut self.token_vectors);
        apply(&mut self.context_vectors);
        apply(&mut self.buckets);
        if let Some(e) = self.exported.as_mut() {
            apply(&mut e.vectors);
        }
    }

    pub(crate) fn set_exported(&mut self, vectors: Vec<f32>, zero_flags: Vec<bool>) {
        self.exported = Some(Exported { vectors, zero_flags });
    }
}

/// Scales every composed vector to unit norm. Zero vectors become `e1` and are flagged.
pub fn finalize(mut model: EmbeddingModel) -> EmbeddingModel {
    let d = model.dim;
    let mut vectors = Vec::with_capacity(model.len() * d);
    let mut zero_flags = Vec::with_capacity(model.len());
    for i in 0..model.len() {
        let mut v = model.composed(i);
        let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
            zero_flags.push(false);
        } else {
            log::warn!("token {:?} has a zero vector; exporting e1", model.vocab[i]);
            v.iter_mut().for_each(|x| *x = 0.0);
            v[0] = 1.0;
            zero_flags.push(true);
        }
        vectors.extend(v);
    }
    model.set_exported(vectors, zero_flags);
    model
}

/// An unfinalized model over `tgt_vocab` seeded from `parent`: the whole bucket table is
/// copied (the hash space is shared), and tokens the parent knows keep their dedicated and
/// context rows. Unknown tokens get default-initialized dedicated rows.
pub fn transfer_init(parent: &EmbeddingModel, tgt_vocab: &[String]) -> Result<EmbeddingModel> {
    if tgt_vocab.is_empty() {
        return Err(Error::Empty("target vocabulary"));
    }
    if !parent.is_finalized() {
        return Err(Error::invalid("transfer needs a finalized parent model"));
    }
    let d = parent.dim;
    let scale = init_scale(d);
    let mut token_vectors = vec![0.0f32; tgt_vocab.len() * d];
    let mut context_vectors = vec![0.0f32; tgt_vocab.len() * d];
    let mut counts = vec![0u64; tgt_vocab.len()];
    for (i, tok) in tgt_vocab.iter().enumerate() {
        let row = &mut token_vectors[i * d..(i + 1) * d];
        match parent.token_index(tok) {
            Some(p) => {
                row.copy_from_slice(parent.token_row(p));
                context_vectors[i * d..(i + 1) * d]
                    .copy_from_slice(&parent.context_vectors[p * d..(p + 1) * d]);
                counts[i] = parent.counts[p];
            }
            None => fill_uniform(&mut token_rng(TRANSFER_SEED, tok), row, scale),
        }
    }
    EmbeddingModel::assemble(
        d,
        parent.min_n,
        parent.max_n,
        parent.bucket_count,
        tgt_vocab.to_vec(),
        counts,
        token_vectors,
        Some(context_vectors),
        parent.buckets.clone(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub token: String,
    pub similarity: f32,
}

/// Exact top-`k` search by cosine similarity over the exported vectors; ties go to the
/// smaller vocabulary index.
pub fn nearest_neighbors(model: &EmbeddingModel, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    let table = model.exported_matrix()?;
    if query.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nearest-neighbor query"));
    }
    let qnorm = query.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    if qnorm == 0.0 {
        return Err(Error::invalid("nearest-neighbor query is the zero vector"));
    }
    let mut scored: Vec<(usize, f32)> = table
        .chunks(model.dim)
        .enumerate()
        .map(|(i, row)| {
            let dot: f64 = row.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            (i, (dot / qnorm) as f32)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(index, similarity)| Neighbor {
            index,
            token: model.vocab[index].clone(),
            similarity,
        })
        .collect())
}
