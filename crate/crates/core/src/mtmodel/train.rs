use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Tensor;
use super::model::{embedding_vocab, frozen_rows, Example, HeadKind, Seq2SeqModel};
use super::optim::{RAdam, RAdamConfig};
use super::vocab::{NUM_SPECIALS, UNK};
use crate::embed::EmbeddingModel;
use crate::error::{Error, Result};
use crate::textproc::ParallelCorpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Upper bound on source plus target tokens per batch. A longer single pair still
    /// forms its own batch.
    pub batch_tokens: usize,
    pub lr_initial: f64,
    /// Learning rate decays linearly from `lr_initial` to zero at `max_steps`.
    pub max_steps: usize,
    /// Validation interval in steps; `0` disables validation.
    pub validate_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
    pub optimizer: RAdamConfig,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
    /// Map unknown source tokens to `<unk>` instead of failing.
    pub map_unknown_src: bool,
    /// Probability of replacing each training source token with `<unk>`.
    pub src_unk_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_tokens: 4096,
            lr_initial: 7e-4,
            max_steps: 20_000,
            validate_every: 1000,
            patience: Some(10),
            optimizer: RAdamConfig::default(),
            clip_norm: None,
            map_unknown_src: false,
            src_unk_rate: 0.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_tokens == 0 {
            return Err(Error::invalid("batch_tokens must be positive"));
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.src_unk_rate) {
            return Err(Error::invalid("src_unk_rate must lie in [0, 1)"));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    fn lr(&self, step: usize) -> f64 {
        self.lr_initial * (1.0 - step as f64 / self.max_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Training loss of every step.
    pub losses: Vec<f64>,
    /// `(step, mean validation loss)` per validation.
    pub validations: Vec<(usize, f64)>,
    /// Step whose parameters were kept, if validation ran.
    pub best_step: Option<usize>,
    pub steps: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Shuffled batches of example indices, each holding at most `budget` tokens.
fn make_batches(examples: &[Example], budget: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        // +1 for the `<s>`/`</s>` row of the target
        let cost = examples[i].src.len() + examples[i].tgt.len() + 1;
        if !cur.is_empty() && used + cost > budget {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += cost;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Token-weighted mean loss over `examples`, in deterministic batches.
fn mean_loss(model: &Seq2SeqModel, examples: &[Example], budget: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < examples.len() {
        let mut end = start;
        let mut used = 0;
        while end < examples.len() && (end == start || used + examples[end].src.len() + examples[end].tgt.len() < budget) {
            used += examples[end].src.len() + examples[end].tgt.len() + 1;
            end += 1;
        }
        let batch: Vec<&Example> = examples[start..end].iter().collect();
        let n: usize = batch.iter().map(|e| e.tgt.len() + 1).sum();
        total += model.loss(&batch)? * n as f64;
        count += n;
        start = end;
    }
    Ok(total / count as f64)
}

/// Optimizes all trainable parameters with RAdam on `data`. With validation data, the
/// parameters of the best validation loss are restored at the end; the starting
/// parameters are validated too.
pub fn train(
    model: &mut Seq2SeqModel,
    data: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let examples = model.prepare(&data.pairs, tc.map_unknown_src)?;
    let valid = match valid {
        Some(v) if tc.validate_every > 0 && !v.is_empty() => Some(model.prepare(&v.pairs, true)?),
        _ => None,
    };
    let sizes: Vec<usize> = (0..model.params.len()).map(|i| model.params.get(i).data.len()).collect();
    let mut opt = RAdam::new(tc.optimizer, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut batches = Vec::new();
    if let Some(v) = &valid {
        let vl = mean_loss(model, v, tc.batch_tokens)?;
        info!("step 0 validation loss {vl:.4}");
        report.validations.push((0, vl));
        best = Some((vl, model.params.values.clone()));
        report.best_step = Some(0);
    }

    while report.steps < tc.max_steps {
        if batches.is_empty() {
            batches = make_batches(&examples, tc.batch_tokens, &mut rng);
            batches.reverse();
        }
        let idx = batches.pop().expect("non-empty");
        let masked: Vec<Example>;
        let batch: Vec<&Example> = if tc.src_unk_rate > 0.0 {
            let mut unk_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            masked = idx
                .iter()
                .map(|&i| Example {
                    src: examples[i].src.iter().map(|&t| if unk_rng.gen_bool(tc.src_unk_rate) { UNK } else { t }).collect(),
                    tgt: examples[i].tgt.clone(),
                })
                .collect();
            masked.iter().collect()
        } else {
            idx.iter().map(|&i| &examples[i]).collect()
        };
        let dropout = ChaCha8Rng::seed_from_u64(rng.gen());
        let (mut g, l) = model.loss_graph(&batch, true, Some(dropout))?;
        let loss = g.scalar(l);
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        g.backward(l);
        let mut grads: Vec<Option<&[f64]>> = vec![None; model.params.len()];
        for (id, t) in g.param_grads() {
            grads[id] = Some(&t.data);
        }
        let scale = match tc.clip_norm {
            Some(c) => {
                let norm = grads.iter().flatten().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt();
                (norm > c).then(|| c / norm)
            }
            None => None,
        };
        let scaled: Vec<Vec<f64>>;
        let grads: Vec<Option<&[f64]>> = match scale {
            Some(s) => {
                scaled = grads.iter().map(|g| g.map_or(Vec::new(), |g| g.iter().map(|x| x * s).collect())).collect();
                grads.iter().zip(&scaled).map(|(g, s)| g.map(|_| s.as_slice())).collect()
            }
            None => grads,
        };
        let lr = tc.lr(report.steps);
        {
            let mut bufs: Vec<&mut [f64]> = model.params.values.iter_mut().map(|t| t.data.as_mut_slice()).collect();
            opt.update(&mut bufs, &grads, lr);
        }
        report.losses.push(loss);
        report.steps += 1;
        debug!("step {} loss {loss:.4} lr {lr:.2e}", report.steps);

        if let Some(v) = &valid {
            if report.steps % tc.validate_every == 0 || report.steps == tc.max_steps {
                let vl = mean_loss(model, v, tc.batch_tokens)?;
                info!("step {} validation loss {vl:.4}", report.steps);
                report.validations.push((report.steps, vl));
                if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                    best = Some((vl, model.params.values.clone()));
                    report.best_step = Some(report.steps);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if tc.patience.is_some_and(|p| since_best >= p) {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }
    if let Some((_, values)) = best {
        model.params.values = values;
    }
    Ok(report)
}

/// Replaces the target vocabulary and both target tables with those of `embedding`, then
/// continues training on `data`. A softmax head keeps the output rows of tokens present in
/// both vocabularies; rows of new tokens start from a seeded uniform draw.
pub fn finetune(
    model: &mut Seq2SeqModel,
    embedding: &EmbeddingModel,
    data: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    swap_target_embeddings(model, embedding)?;
    train(model, data, valid, tc)
}

pub(crate) fn swap_target_embeddings(model: &mut Seq2SeqModel, embedding: &EmbeddingModel) -> Result<()> {
    if model.config.learned_target_input {
        return Err(Error::invalid("model has no pretrained target tables to swap"));
    }
    if embedding.dim() != model.config.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: model.config.embed_dim,
            found: embedding.dim(),
        });
    }
    let vocab = embedding_vocab(embedding)?;
    let frozen = frozen_rows(&vocab, embedding)?;
    if model.config.head_kind == HeadKind::Softmax {
        let w = model.params.get(model.params.id("head.w").expect("head.w"));
        let b = model.params.get(model.params.id("head.b").expect("head.b"));
        let d = w.rows;
        let a = (6.0 / (d + vocab.len()) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7e57_ab1e);
        let mut nw = Tensor::zeros(d, vocab.len());
        let mut nb = Tensor::zeros(1, vocab.len());
        for (j, tok) in vocab.tokens().iter().enumerate() {
            let old = if j < NUM_SPECIALS { Some(j) } else { model.tgt_vocab.id(tok) };
            for i in 0..d {
                nw.data[i * vocab.len() + j] = match old {
                    Some(o) => w.data[i * w.cols + o],
                    None => rng.gen_range(-a..a),
                };
            }
            nb.data[j] = old.map_or(0.0, |o| b.data[o]);
        }
        model.params.replace("head.w", nw);
        model.params.replace("head.b", nb);
    }
    model.tgt_vocab = vocab;
    model.frozen = frozen;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(s: usize, t: usize) -> Example {
        Example { src: vec![4; s], tgt: vec![4; t] }
    }

    #[test]
    fn batches_cover_every_example_within_budget() {
        let examples: Vec<Example> = (1..=20).map(|i| ex(i % 5 + 1, i % 3 + 1)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = make_batches(&examples, 12, &mut rng);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        for b in &batches {
            let cost: usize = b.iter().map(|&i| examples[i].src.len() + examples[i].tgt.len() + 1).sum();
            assert!(b.len() == 1 || cost <= 12);
        }
    }

    #[test]
    fn oversized_pair_gets_its_own_batch() {
        let examples = vec![ex(50, 50), ex(1, 1)];
        let batches = make_batches(&examples, 10, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(batches.len(), 2);
    }

    #[test]
    fn learning_rate_decays_linearly() {
        let tc = TrainConfig { lr_initial: 1.0, max_steps: 4, ..TrainConfig::default() };
        assert_eq!([tc.lr(0), tc.lr(1), tc.lr(2), tc.lr(3)], [1.0, 0.75, 0.5, 0.25]);
    }
}
