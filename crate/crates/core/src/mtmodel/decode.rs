use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{gemm, spans, Graph, Segments, Tensor};
use super::model::{Binder, HeadKind, Seq2SeqModel};
use super::vocab::{BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

/// Tokens never emitted by decoding.
const BANNED: [usize; 3] = [PAD, UNK, BOS];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub tokens: Vec<String>,
    /// `max_len` tokens were produced without `</s>` being chosen.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Beam width for softmax models. Continuous models always decode greedily.
    pub beam: usize,
    /// Overrides the model's `max_len`.
    pub max_len: Option<usize>,
    /// Map unknown source tokens to `<unk>` instead of failing.
    pub map_unknown: bool,
    /// Sentences per greedy batch.
    pub batch_size: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            max_len: None,
            map_unknown: true,
            batch_size: 32,
        }
    }
}

/// Index of the row of `table` with the largest dot product with `pred`, skipping `banned`.
/// Ties go to the smaller index.
pub fn nearest_row(table: &Tensor, pred: &[f64], banned: &[usize]) -> usize {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for i in 0..table.rows {
        if banned.contains(&i) {
            continue;
        }
        let s: f64 = table.row(i).iter().zip(pred).map(|(a, b)| a * b).sum();
        if s > best.0 || best.1 == usize::MAX {
            best = (s, i);
        }
    }
    best.1
}

/// Row-wise argmax of `preds · tableᵀ` over unbanned rows.
fn nearest_rows(table: &Tensor, preds: &Tensor, banned: &[usize]) -> Vec<usize> {
    let (n, v, e) = (preds.rows, table.rows, table.cols);
    let mut scores = vec![0.0; n * v];
    gemm(n, e, v, 1.0, &preds.data, e, 1, &table.data, 1, e, 0.0, &mut scores, v, 1);
    scores
        .chunks(v)
        .map(|row| {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (i, &s) in row.iter().enumerate() {
                if !banned.contains(&i) && (s > best.0 || best.1 == usize::MAX) {
                    best = (s, i);
                }
            }
            best.1
        })
        .collect()
}

fn encoder_states(model: &Seq2SeqModel, srcs: &[&[usize]]) -> Tensor {
    let mut g = Graph::new(false, None);
    let mut b = Binder::new(model, false);
    let enc = model.encode(&mut g, &mut b, srcs);
    g.value(enc).clone()
}

/// Head outputs at the last position of each prefix. `src_spans[i]` locates the encoder
/// rows of prefix `i` inside `enc`.
fn last_outputs(model: &Seq2SeqModel, enc: &Tensor, src_spans: &[(usize, usize)], prefixes: &[Vec<usize>]) -> Tensor {
    let mut g = Graph::new(false, None);
    let mut b = Binder::new(model, false);
    let enc = g.leaf(enc.clone());
    let lens: Vec<usize> = prefixes.iter().map(|p| p.len()).collect();
    let cross = Segments {
        q: spans(&lens),
        k: src_spans.to_vec(),
    };
    let tin: Vec<&[usize]> = prefixes.iter().map(|p| p.as_slice()).collect();
    let h = model.decode(&mut g, &mut b, enc, &tin, &cross);
    let last: Vec<usize> = spans(&lens).iter().map(|(s, l)| s + l - 1).collect();
    let h = g.gather(h, &last);
    let out = model.head(&mut g, &mut b, h);
    g.value(out).clone()
}

/// Greedy decoding of a batch with a continuous head: each step emits the output-table
/// token nearest to the predicted vector and feeds it back.
pub fn greedy_continuous(model: &Seq2SeqModel, srcs: &[&[usize]], max_len: usize) -> Result<Vec<(Vec<usize>, bool)>> {
    let table = model.output_table()?;
    if srcs.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("source sentence"));
    }
    let enc = encoder_states(model, srcs);
    let src_spans = spans(&srcs.iter().map(|s| s.len()).collect::<Vec<_>>());
    let mut out: Vec<(Vec<usize>, bool)> = vec![(Vec::new(), false); srcs.len()];
    let mut active: Vec<usize> = (0..srcs.len()).collect();
    for step in 0..=max_len {
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<usize>> = active
            .iter()
            .map(|&i| std::iter::once(BOS).chain(out[i].0.iter().copied()).collect())
            .collect();
        let k: Vec<(usize, usize)> = active.iter().map(|&i| src_spans[i]).collect();
        let preds = last_outputs(model, &enc, &k, &prefixes);
        let next = nearest_rows(&table, &preds, &BANNED);
        let mut still = Vec::with_capacity(active.len());
        for (&i, &tok) in active.iter().zip(&next) {
            if tok == EOS {
                continue;
            }
            if step == max_len {
                out[i].1 = true;
            } else {
                out[i].0.push(tok);
                still.push(i);
            }
        }
        active = still;
    }
    Ok(out)
}

/// Next-token log-probabilities for a batch of prefixes (without `<s>`).
pub trait StepScorer {
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities, including the final `</s>`.
    pub score: f64,
    pub truncated: bool,
}

impl Hypothesis {
    /// Score per emitted token, `</s>` included.
    pub fn normalized(&self) -> f64 {
        self.score / (self.tokens.len() + 1) as f64
    }
}

/// Beam search with length-normalized final scores. Hypotheses end when `</s>` ranks
/// within the beam; at `max_len` tokens every live hypothesis is closed with `</s>`, and
/// marked truncated if `</s>` was not its best continuation. Stops once `beam` hypotheses
/// have finished.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &mut S, beam: usize, max_len: usize, banned: &[usize]) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::invalid("beam width must be positive"));
    }
    let mut live: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..=max_len {
        if live.is_empty() || finished.len() >= beam {
            break;
        }
        let prefixes: Vec<Vec<usize>> = live.iter().map(|h| h.0.clone()).collect();
        let lp = scorer.log_probs(&prefixes)?;
        if step == max_len {
            for ((tokens, score), row) in live.drain(..).zip(&lp) {
                let best = (0..row.len())
                    .filter(|t| !banned.contains(t))
                    .fold(None, |acc: Option<usize>, t| match acc {
                        Some(b) if row[b] >= row[t] => Some(b),
                        _ => Some(t),
                    });
                finished.push(Hypothesis {
                    tokens,
                    score: score + row[EOS],
                    truncated: best != Some(EOS),
                });
            }
            break;
        }
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (i, row) in lp.iter().enumerate() {
            for (t, &l) in row.iter().enumerate() {
                if !banned.contains(&t) && l.is_finite() {
                    cand.push((live[i].1 + l, i, t));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(beam);
        for (rank, &(score, i, t)) in cand.iter().enumerate() {
            if next.len() >= beam {
                break;
            }
            if t == EOS {
                if rank < beam {
                    finished.push(Hypothesis {
                        tokens: live[i].0.clone(),
                        score,
                        truncated: false,
                    });
                }
            } else {
                let mut tokens = live[i].0.clone();
                tokens.push(t);
                next.push((tokens, score));
            }
        }
        live = next;
    }
    finished
        .into_iter()
        .reduce(|a, b| if b.normalized() > a.normalized() { b } else { a })
        .ok_or(Error::Empty("beam search hypotheses"))
}

/// Softmax scorer for one source sentence.
struct ModelScorer<'m> {
    model: &'m Seq2SeqModel,
    enc: Tensor,
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let with_bos: Vec<Vec<usize>> = prefixes
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect())
            .collect();
        let k = vec![(0, self.enc.rows); prefixes.len()];
        let logits = last_outputs(self.model, &self.enc, &k, &with_bos);
        Ok((0..logits.rows)
            .map(|r| {
                let row = logits.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                row.iter().map(|x| x - lse).collect()
            })
            .collect())
    }
}

/// Beam search over a softmax head for one source sentence.
pub fn beam_softmax(model: &Seq2SeqModel, src: &[usize], beam: usize, max_len: usize) -> Result<Hypothesis> {
    if model.head_kind() != HeadKind::Softmax {
        return Err(Error::invalid("beam search needs a softmax head"));
    }
    if src.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let mut scorer = ModelScorer {
        model,
        enc: encoder_states(model, &[src]),
    };
    beam_search(&mut scorer, beam, max_len, &BANNED)
}

fn to_translation(model: &Seq2SeqModel, ids: &[usize], truncated: bool) -> Translation {
    Translation {
        tokens: model.tgt_vocab().decode(ids),
        truncated,
    }
}

/// Greedy translation of one whitespace-tokenized sentence with a continuous head.
pub fn translate_greedy(model: &Seq2SeqModel, src: &str) -> Result<Translation> {
    let opts = DecodeOptions::default();
    let ids = model.src_vocab().encode(src, opts.map_unknown)?;
    let (out, truncated) = greedy_continuous(model, &[&ids], model.config().max_len)?.remove(0);
    Ok(to_translation(model, &out, truncated))
}

/// Beam translation of one whitespace-tokenized sentence with a softmax head.
pub fn translate_beam(model: &Seq2SeqModel, src: &str, beam: usize) -> Result<Translation> {
    let ids = model.src_vocab().encode(src, true)?;
    let h = beam_softmax(model, &ids, beam, model.config().max_len)?;
    Ok(to_translation(model, &h.tokens, h.truncated))
}

/// Translates every sentence, in order. Empty sentences give empty translations.
pub fn translate_batch(model: &Seq2SeqModel, sentences: &[String], opts: &DecodeOptions) -> Result<Vec<Translation>> {
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let max_len = opts.max_len.unwrap_or(model.config().max_len);
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| model.src_vocab().encode(s, opts.map_unknown))
        .collect::<Result<_>>()?;
    let empty = || Translation { tokens: Vec::new(), truncated: false };
    match model.head_kind() {
        HeadKind::Continuous => {
            let chunks: Vec<Vec<Translation>> = ids
                .par_chunks(opts.batch_size)
                .map(|chunk| {
                    let nonempty: Vec<&[usize]> = chunk.iter().filter(|s| !s.is_empty()).map(|s| s.as_slice()).collect();
                    let mut decoded = if nonempty.is_empty() {
                        Vec::new()
                    } else {
                        greedy_continuous(model, &nonempty, max_len)?
                    }
                    .into_iter();
                    Ok(chunk
                        .iter()
                        .map(|s| match s.is_empty() {
                            true => empty(),
                            false => {
                                let (out, t) = decoded.next().expect("one result per sentence");
                                to_translation(model, &out, t)
                            }
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            Ok(chunks.into_iter().flatten().collect())
        }
        HeadKind::Softmax => ids
            .par_iter()
            .map(|s| {
                if s.is_empty() {
                    return Ok(empty());
                }
                let h = beam_softmax(model, s, opts.beam, max_len)?;
                Ok(to_translation(model, &h.tokens, h.truncated))
            })
            .collect(),
    }
}
