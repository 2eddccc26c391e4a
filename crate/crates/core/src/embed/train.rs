use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};

use super::{fill_uniform, init_scale, token_rng, EmbeddingModel, SkipgramConfig};
use crate::error::{Error, Result};
use crate::textproc::MonoCorpus;

/// Skip-gram with negative sampling over whitespace-separated (BPE) tokens.
///
/// With `init`, rows are taken from that model wherever it has them: the bucket table as a
/// whole (shapes must agree) and the dedicated and context rows of shared tokens. Everything
/// else is default-initialized from `config.seed`.
pub fn train_embeddings(
    corpus: &MonoCorpus,
    config: &SkipgramConfig,
    init: Option<&EmbeddingModel>,
) -> Result<EmbeddingModel> {
    config.validate()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in &corpus.sentences {
        for tok in s.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::Empty("corpus has no tokens at or above min_count"));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let words: Vec<String> = vocab.iter().map(|(t, _)| t.to_string()).collect();
    let freqs: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();

    let mut model = match init {
        None => EmbeddingModel::fresh(words, freqs, config)?,
        Some(parent) => seeded_from(parent, words, freqs, config)?,
    };
    if config.epochs == 0 {
        return Ok(model);
    }

    let ids: Vec<Vec<usize>> = corpus
        .sentences
        .iter()
        .map(|s| s.split_whitespace().filter_map(|t| model.token_index(t)).collect())
        .collect();
    let per_epoch: usize = ids.iter().map(Vec::len).sum();
    let total = (per_epoch * config.epochs) as f64;
    let noise = WeightedAliasIndex::new(model.counts.iter().map(|&c| (c as f64).powf(0.75)).collect())
        .map_err(|e| Error::invalid(format!("negative sampling table: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut state = Scratch::new(config.dim);
    let mut processed = 0usize;
    for _ in 0..config.epochs {
        for sent in &ids {
            for (i, &center) in sent.iter().enumerate() {
                let lr = (config.learning_rate * (1.0 - processed as f64 / total)) as f32;
                processed += 1;
                let b = rng.gen_range(1..=config.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sent.len() - 1);
                for (c, &target) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if c != i {
                        update(&mut model, &mut state, center, target, lr, config.negatives, &noise, &mut rng);
                    }
                }
            }
        }
    }
    Ok(model)
}

fn seeded_from(
    parent: &EmbeddingModel,
    words: Vec<String>,
    freqs: Vec<u64>,
    config: &SkipgramConfig,
) -> Result<EmbeddingModel> {
    if parent.dim != config.dim
        || parent.bucket_count != config.bucket_count
        || (parent.min_n, parent.max_n) != (config.min_n, config.max_n)
    {
        return Err(Error::invalid(
            "initial model shape (dim, buckets, n-gram range) differs from the training config",
        ));
    }
    let d = config.dim;
    let scale = init_scale(d);
    let mut token_vectors = vec![0.0f32; words.len() * d];
    let mut context_vectors = vec![0.0f32; words.len() * d];
    for (i, tok) in words.iter().enumerate() {
        let row = i * d..(i + 1) * d;
        match parent.token_index(tok) {
            Some(p) => {
                token_vectors[row.clone()].copy_from_slice(parent.token_row(p));
                context_vectors[row].copy_from_slice(&parent.context_vectors[p * d..(p + 1) * d]);
            }
            None => fill_uniform(&mut token_rng(config.seed, tok), &mut token_vectors[row], scale),
        }
    }
    EmbeddingModel::assemble(
        d,
        config.min_n,
        config.max_n,
        config.bucket_count,
        words,
        freqs,
        token_vectors,
        Some(context_vectors),
        parent.buckets.clone(),
    )
}

struct Scratch {
    hidden: Vec<f32>,
    grad: Vec<f32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            hidden: vec![0.0; dim],
            grad: vec![0.0; dim],
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    m: &mut EmbeddingModel,
    s: &mut Scratch,
    center: usize,
    target: usize,
    lr: f32,
    negatives: usize,
    noise: &WeightedAliasIndex<f64>,
    rng: &mut ChaCha8Rng,
) {
    let d = m.dim;
    s.hidden.copy_from_slice(&m.composed(center));
    s.grad.iter_mut().for_each(|g| *g = 0.0);
    let mut step = |out: usize, label: f32, s: &mut Scratch| {
        let ctx = &mut m.context_vectors[out * d..(out + 1) * d];
        let score = sigmoid(ctx.iter().zip(&s.hidden).map(|(a, b)| a * b).sum());
        let alpha = lr * (label - score);
        for ((g, c), h) in s.grad.iter_mut().zip(ctx.iter_mut()).zip(&s.hidden) {
            *g += alpha * *c;
            *c += alpha * h;
        }
    };
    step(target, 1.0, s);
    for _ in 0..negatives {
        let mut neg = noise.sample(rng);
        // one redraw keeps the positive out without biasing small vocabularies into a loop
        if neg == target {
            neg = noise.sample(rng);
            if neg == target {
                continue;
            }
        }
        step(neg, 0.0, s);
    }
    let inputs = std::iter::once(center).map(|i| (true, i)).chain(
        m.subwords[center].clone().into_iter().map(|b| (false, b as usize)),
    );
    for (dedicated, row) in inputs.collect::<Vec<_>>() {
        let dst = if dedicated {
            &mut m.token_vectors[row * d..(row + 1) * d]
        } else {
            &mut m.buckets[row * d..(row + 1) * d]
        };
        dst.iter_mut().zip(&s.grad).for_each(|(v, g)| *v += g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::finalize;

    fn cfg() -> SkipgramConfig {
        SkipgramConfig {
            dim: 16,
            window: 2,
            negatives: 3,
            epochs: 3,
            learning_rate: 0.05,
            bucket_count: 1000,
            min_count: 1,
            min_n: 3,
            max_n: 4,
            seed: 9,
        }
    }

    fn corpus() -> MonoCorpus {
        MonoCorpus::from_strs("x", &["a b c d", "b c d e", "c d e a"]).unwrap()
    }

    #[test]
    fn vocabulary_sorted_by_count_then_token() {
        let m = train_embeddings(&MonoCorpus::from_strs("x", &["z y y x x x"]).unwrap(), &cfg(), None).unwrap();
        assert_eq!(m.vocab(), &["x", "y", "z"]);
        assert_eq!((m.count(0), m.count(2)), (3, 1));
    }

    #[test]
    fn min_count_drops_rare_tokens() {
        let c = SkipgramConfig { min_count: 2, ..cfg() };
        let m = train_embeddings(&MonoCorpus::from_strs("x", &["p q q"]).unwrap(), &c, None).unwrap();
        assert_eq!(m.vocab(), &["q"]);
        let c = SkipgramConfig { min_count: 5, ..cfg() };
        assert!(train_embeddings(&MonoCorpus::from_strs("x", &["p q q"]).unwrap(), &c, None).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let c = SkipgramConfig { epochs: 0, ..cfg() };
        let m = train_embeddings(&corpus(), &c, None).unwrap();
        let fresh = EmbeddingModel::fresh(m.vocab().to_vec(), m.counts.clone(), &c).unwrap();
        assert_eq!(m, fresh);
    }

    #[test]
    fn training_is_deterministic_and_changes_rows() {
        let a = train_embeddings(&corpus(), &cfg(), None).unwrap();
        let b = train_embeddings(&corpus(), &cfg(), None).unwrap();
        assert_eq!(a, b);
        let c = SkipgramConfig { epochs: 0, ..cfg() };
        let z = train_embeddings(&corpus(), &c, None).unwrap();
        assert_ne!(a.token_vectors, z.token_vectors);
        assert!(a.context_vectors.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn init_model_rows_are_reused() {
        let parent = finalize(train_embeddings(&corpus(), &cfg(), None).unwrap());
        let c = SkipgramConfig { epochs: 0, ..cfg() };
        let child = train_embeddings(&MonoCorpus::from_strs("y", &["a q"]).unwrap(), &c, Some(&parent)).unwrap();
        let a = child.token_index("a").unwrap();
        assert_eq!(child.token_row(a), parent.token_row(parent.token_index("a").unwrap()));
        assert_eq!(child.buckets, parent.buckets);
        let bad = SkipgramConfig { dim: 8, ..c };
        assert!(train_embeddings(&corpus(), &bad, Some(&parent)).is_err());
    }
}
