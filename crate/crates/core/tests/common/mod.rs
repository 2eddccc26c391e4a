#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varmt::embed::{finalize, train_embeddings, EmbeddingModel, SkipgramConfig};
use varmt::mtmodel::{HeadKind, ModelConfig};
use varmt::textproc::{MonoCorpus, ParallelCorpus};

/// Finalized embeddings of `tokens` with no subword sharing: random, nearly orthogonal rows.
pub fn plain_embedding(tokens: &[String], dim: usize, seed: u64) -> EmbeddingModel {
    let cfg = SkipgramConfig {
        dim,
        bucket_count: 16,
        min_n: 30,
        max_n: 30,
        epochs: 0,
        seed,
        ..SkipgramConfig::default()
    };
    let corpus = MonoCorpus::new("x", vec![tokens.join(" ")]).unwrap();
    finalize(train_embeddings(&corpus, &cfg, None).unwrap())
}

pub fn small_config(head: HeadKind, d_model: usize, layers: usize, embed_dim: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        num_layers_enc: layers,
        num_layers_dec: layers,
        num_heads: 2,
        ffn_dim: 2 * d_model,
        dropout_rate: 0.0,
        embed_dim,
        head_kind: head,
        max_len: 12,
        seed: 5,
        ..ModelConfig::default()
    }
}

pub fn copy_vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Pairs whose target repeats the source: `n` sentences of 1..=`max_len` tokens.
pub fn copy_corpus(vocab: &[String], n: usize, max_len: usize, rng: &mut ChaCha8Rng) -> ParallelCorpus {
    let pairs = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let s: Vec<&str> = (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].as_str()).collect();
            let s = s.join(" ");
            (s.clone(), s)
        })
        .collect();
    ParallelCorpus::new(pairs, varmt::textproc::Origin::Gold).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest relative error between analytic and central-difference gradients over `n`
/// randomly chosen scalar parameters.
pub fn model_gradient_error(model: &mut varmt::mtmodel::Seq2SeqModel, batch: &[varmt::mtmodel::Example], n: usize, seed: u64) -> f64 {
    let refs: Vec<&varmt::mtmodel::Example> = batch.iter().collect();
    let (_, grads) = model.loss_and_grads(&refs).unwrap();
    let mut r = rng(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        // only parameters that the batch reaches have a gradient
        let (id, j) = loop {
            let id = r.gen_range(0..model.params().len());
            if let Some(g) = &grads[id] {
                let j = r.gen_range(0..g.data.len());
                if g.data[j] != 0.0 {
                    break (id, j);
                }
            }
        };
        let orig = model.params().get(id).data[j];
        model.params_mut().get_mut(id).data[j] = orig + h;
        let up = model.loss(&refs).unwrap();
        model.params_mut().get_mut(id).data[j] = orig - h;
        let down = model.loss(&refs).unwrap();
        model.params_mut().get_mut(id).data[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[id].as_ref().unwrap().data[j];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Position-wise token accuracy of hypotheses against references, over reference tokens.
pub fn token_accuracy(hyps: &[Vec<String>], refs: &[String]) -> f64 {
    let (mut ok, mut n) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        for (i, w) in r.split_whitespace().enumerate() {
            n += 1;
            ok += (h.get(i).map(|s| s.as_str()) == Some(w)) as usize;
        }
    }
    ok as f64 / n as f64
}
