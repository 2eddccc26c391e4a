//! Writes a complete synthetic experiment: corpora, the variety spec and a pipeline config.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BpeSettings, DataPaths, DecodeSettings, PipelineConfig, TgtEmbeddingSettings};
use super::synthetic::{generate_synthetic_pair, LexiconSizes, SyntheticGrammar, SyntheticVarietySpec};
use crate::embed::SkipgramConfig;
use crate::error::{Error, Result};
use crate::mtmodel::{ModelConfig, TrainConfig};
use crate::textproc::{write_lines, MonoCorpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub seed: u64,
    pub lexicon: LexiconSizes,
    /// src–std training pairs.
    pub train_pairs: usize,
    /// Extra std monolingual sentences.
    pub std_mono: usize,
    pub tgt_mono: usize,
    pub dev: usize,
    pub test: usize,
    pub char_rules: bool,
    pub lexical_rules: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            seed: 1,
            lexicon: LexiconSizes::default(),
            train_pairs: 20_000,
            std_mono: 20_000,
            tgt_mono: 2_000,
            dev: 300,
            test: 500,
            char_rules: true,
            lexical_rules: 50,
        }
    }
}

fn split(pairs: Vec<(String, String)>) -> (Vec<String>, Vec<String>) {
    pairs.into_iter().unzip()
}

/// Generates the corpora into `dir` and writes `pipeline.toml` next to them. Returns the
/// config path.
pub fn write_synthetic_experiment(dir: &Path, settings: &SynthSettings) -> Result<PathBuf> {
    if settings.train_pairs == 0 || settings.tgt_mono == 0 || settings.dev == 0 || settings.test == 0 {
        return Err(Error::invalid("synthetic corpus sizes must be positive"));
    }
    std::fs::create_dir_all(dir)?;
    let grammar = SyntheticGrammar::new(settings.seed, settings.lexicon);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(1));
    let (train_src, train_std) = split(grammar.sample_many(settings.train_pairs, &mut rng));
    let (_, std_mono) = split(grammar.sample_many(settings.std_mono, &mut rng));
    let (mono_src, mono_std) = split(grammar.sample_many(settings.tgt_mono, &mut rng));
    let (dev_src, dev_std) = split(grammar.sample_many(settings.dev, &mut rng));
    let (test_src, test_std) = split(grammar.sample_many(settings.test, &mut rng));

    let all_std: Vec<String> = train_std.iter().chain(&std_mono).cloned().collect();
    let mut spec = SyntheticVarietySpec::default_for(&MonoCorpus::new("std", all_std)?, settings.lexical_rules, settings.seed)?;
    if !settings.char_rules {
        spec.char_rules.clear();
    }
    let vary = |s: Vec<String>, salt: u64| -> Result<Vec<String>> {
        Ok(generate_synthetic_pair(&spec, &MonoCorpus::new("std", s)?, settings.seed ^ salt)?.0.sentences)
    };
    let tgt_mono = vary(mono_std.clone(), 1)?;
    let dev_tgt = vary(dev_std.clone(), 2)?;
    let test_tgt = vary(test_std.clone(), 3)?;

    let files: [(&str, &[String]); 12] = [
        ("train.src", &train_src),
        ("train.std", &train_std),
        ("mono.std", &std_mono),
        ("mono.tgt", &tgt_mono),
        ("mono.tgt.src", &mono_src),
        ("mono.tgt.std", &mono_std),
        ("dev.src", &dev_src),
        ("dev.std", &dev_std),
        ("dev.tgt", &dev_tgt),
        ("test.src", &test_src),
        ("test.std", &test_std),
        ("test.tgt", &test_tgt),
    ];
    for (name, lines) in files {
        write_lines(dir.join(name), lines)?;
    }
    let spec_json = serde_json::to_string_pretty(&spec).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join("variety.json"), spec_json + "\n")?;

    let cfg = desk_config(settings.seed);
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, cfg.to_toml()?)?;
    Ok(path)
}

/// Desk-scale settings for the synthetic experiment, with paths relative to its directory.
pub fn desk_config(seed: u64) -> PipelineConfig {
    let data = DataPaths {
        train_src: "train.src".into(),
        train_std: "train.std".into(),
        std_mono: Some("mono.std".into()),
        tgt_mono: "mono.tgt".into(),
        dev_src: "dev.src".into(),
        dev_tgt: "dev.tgt".into(),
        dev_std: Some("dev.std".into()),
        test_src: "test.src".into(),
        test_tgt: "test.tgt".into(),
        tgt_mono_src: Some("mono.tgt.src".into()),
    };
    let embeddings = SkipgramConfig {
        dim: 64,
        window: 3,
        negatives: 5,
        epochs: 15,
        learning_rate: 0.05,
        bucket_count: 100_000,
        ..SkipgramConfig::default()
    };
    let model = ModelConfig {
        d_model: 64,
        num_layers_enc: 2,
        num_layers_dec: 2,
        num_heads: 4,
        ffn_dim: 128,
        dropout_rate: 0.1,
        embed_dim: 64,
        max_len: 40,
        ..ModelConfig::default()
    };
    let train = |steps: usize, lr: f64| TrainConfig {
        batch_tokens: 600,
        lr_initial: lr,
        max_steps: steps,
        validate_every: 250,
        patience: Some(4),
        ..TrainConfig::default()
    };
    let mut cfg = PipelineConfig {
        seed,
        run_dir: "run".into(),
        data,
        bpe: BpeSettings {
            src_merges: 1000,
            joint_merges: 1500,
        },
        embeddings,
        tgt_embeddings: TgtEmbeddingSettings {
            epochs: 5,
            learning_rate: 0.05,
        },
        model: model.clone(),
        reverse_model: model,
        train_b: TrainConfig {
            validate_every: 1000,
            ..train(8000, 1e-3)
        },
        train_c: TrainConfig {
            src_unk_rate: 0.25,
            ..train(2000, 1e-3)
        },
        train_e: train(1500, 5e-4),
        decode: DecodeSettings { beam: 5, max_len: 40 },
        ablation: Default::default(),
    };
    cfg.apply_seed();
    cfg
}
