//! Pseudo-parallel data: a reverse (std→src) model translates tgt monolingual text into src.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtmodel::{
    build_standard_model, train, translate_batch, DecodeOptions, ModelConfig, Seq2SeqModel, TrainConfig, Translation,
    Vocab, UNK,
};
use crate::textproc::{MonoCorpus, Origin, ParallelCorpus};

/// Trains a softmax model with learned decoder embeddings on `(std, src)` pairs.
pub fn train_reverse_model(
    std_to_src: &ParallelCorpus,
    config: &ModelConfig,
    tc: &TrainConfig,
    valid: Option<&ParallelCorpus>,
) -> Result<Seq2SeqModel> {
    if std_to_src.is_empty() {
        return Err(Error::Empty("reverse training corpus"));
    }
    if std_to_src.origin != Origin::Gold {
        return Err(Error::invalid("the reverse model trains on gold parallel data"));
    }
    let inputs: Vec<&str> = std_to_src.pairs.iter().map(|p| p.0.as_str()).collect();
    let outputs: Vec<&str> = std_to_src.pairs.iter().map(|p| p.1.as_str()).collect();
    let mut model = build_standard_model(config, &Vocab::from_sentences(&inputs), &Vocab::from_sentences(&outputs))?;
    let report = train(&mut model, std_to_src, valid, tc)?;
    info!(
        "reverse model: {} steps, final loss {:.4}",
        report.steps,
        report.final_loss().unwrap_or(f64::NAN)
    );
    Ok(model)
}

/// Anything that turns one whitespace-tokenized sentence into another.
pub trait SentenceTranslator: Sync {
    fn translate(&self, sentence: &str) -> Result<Translation>;

    /// Rejects inputs that cannot be meaningful for this translator.
    fn check_inputs(&self, _corpus: &MonoCorpus) -> Result<()> {
        Ok(())
    }
}

pub struct ModelTranslator<'m> {
    pub model: &'m Seq2SeqModel,
    pub options: DecodeOptions,
}

impl<'m> ModelTranslator<'m> {
    /// Beam 5 for softmax models; unknown input tokens become `<unk>`.
    pub fn new(model: &'m Seq2SeqModel) -> Self {
        ModelTranslator {
            model,
            options: DecodeOptions {
                beam: 5,
                map_unknown: true,
                ..DecodeOptions::default()
            },
        }
    }
}

impl SentenceTranslator for ModelTranslator<'_> {
    fn translate(&self, sentence: &str) -> Result<Translation> {
        let opts = DecodeOptions { map_unknown: true, ..self.options };
        Ok(translate_batch(self.model, &[sentence.to_string()], &opts)?.remove(0))
    }

    /// Fails when no input token is in the model's source vocabulary, which means the
    /// corpus was segmented with different codes.
    fn check_inputs(&self, corpus: &MonoCorpus) -> Result<()> {
        let vocab = self.model.src_vocab();
        let (mut known, mut total) = (0usize, 0usize);
        for w in corpus.words() {
            total += 1;
            if vocab.id(w).is_some_and(|i| i != UNK) {
                known += 1;
            }
        }
        if total > 0 && known == 0 {
            return Err(Error::invalid("no input token is in the model's source vocabulary"));
        }
        if total > 0 {
            info!("{:.1}% of input tokens known to the reverse model", 100.0 * known as f64 / total as f64);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub input_sentences: usize,
    pub kept: usize,
    /// Empty outputs and failed translations.
    pub dropped: usize,
    /// Kept outputs that hit the length limit.
    pub truncated: usize,
}

/// Translates every tgt sentence and pairs the output (as src) with the unchanged input.
/// Order follows `tgt_mono`; empty or failed translations are dropped and counted.
pub fn synthesize_pseudo_parallel<T: SentenceTranslator + ?Sized>(
    translator: &T,
    tgt_mono: &MonoCorpus,
) -> Result<(ParallelCorpus, SynthesisStats)> {
    translator.check_inputs(tgt_mono)?;
    let outputs: Vec<Result<Translation>> = tgt_mono.sentences.par_iter().map(|s| translator.translate(s)).collect();
    let mut stats = SynthesisStats {
        input_sentences: tgt_mono.len(),
        ..SynthesisStats::default()
    };
    let mut pairs = Vec::with_capacity(outputs.len());
    for (i, (out, tgt)) in outputs.into_iter().zip(&tgt_mono.sentences).enumerate() {
        match out {
            Ok(t) if !t.tokens.is_empty() && !tgt.trim().is_empty() => {
                stats.truncated += t.truncated as usize;
                pairs.push((t.tokens.join(" "), tgt.clone()));
            }
            Ok(_) => stats.dropped += 1,
            Err(e) => {
                warn!("sentence {i} failed to translate: {e}");
                stats.dropped += 1;
            }
        }
    }
    stats.kept = pairs.len();
    if pairs.is_empty() {
        return Err(Error::Empty("pseudo-parallel corpus: every translation failed"));
    }
    info!("pseudo-parallel: kept {} of {}, dropped {}", stats.kept, stats.input_sentences, stats.dropped);
    Ok((ParallelCorpus::new(pairs, Origin::Pseudo)?, stats))
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// `<stem>.src`, `<stem>.tgt` and `<stem>.stats`.
pub fn pseudo_paths(stem: &Path) -> [PathBuf; 3] {
    [with_suffix(stem, "src"), with_suffix(stem, "tgt"), with_suffix(stem, "stats")]
}

pub fn write_pseudo_corpus(corpus: &ParallelCorpus, stats: &SynthesisStats, stem: &Path) -> Result<()> {
    let [src, tgt, st] = pseudo_paths(stem);
    corpus.write(&src, &tgt)?;
    let json = serde_json::to_string_pretty(stats).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(st, json + "\n")?;
    Ok(())
}

pub fn read_pseudo_corpus(stem: &Path) -> Result<(ParallelCorpus, SynthesisStats)> {
    let [src, tgt, st] = pseudo_paths(stem);
    let corpus = ParallelCorpus::read(&src, &tgt, Origin::Pseudo)?;
    let text = std::fs::read_to_string(&st)?;
    let stats = serde_json::from_str(&text).map_err(|e| Error::format("synthesis stats", &st, e.to_string()))?;
    Ok((corpus, stats))
}
