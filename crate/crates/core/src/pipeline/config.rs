//! TOML experiment configuration. See the README for the full grammar.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::SkipgramConfig;
use crate::error::{Error, Result};
use crate::mtmodel::{HeadKind, ModelConfig, TrainConfig};

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Line-aligned src–std training data.
    pub train_src: PathBuf,
    pub train_std: PathBuf,
    /// Extra std monolingual text for the std embeddings, on top of `train_std`.
    pub std_mono: Option<PathBuf>,
    pub tgt_mono: PathBuf,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    /// std references of the dev sources, used to validate the src→std model.
    pub dev_std: Option<PathBuf>,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    /// Known src side of `tgt_mono`, used to score back-translations.
    pub tgt_mono_src: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeSettings {
    /// Merges learned on the src side alone.
    pub src_merges: usize,
    /// Merges learned jointly on std and tgt text.
    pub joint_merges: usize,
}

impl Default for BpeSettings {
    fn default() -> Self {
        BpeSettings {
            src_merges: 24_000,
            joint_merges: 24_000,
        }
    }
}

/// Stage (d): continued skip-gram training on tgt text. The remaining skip-gram settings
/// come from `[embeddings]`, since the bucket table is shared with the std model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TgtEmbeddingSettings {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TgtEmbeddingSettings {
    fn default() -> Self {
        TgtEmbeddingSettings {
            epochs: 5,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    /// Beam width for softmax models, including the reverse model.
    pub beam: usize,
    /// Output length limit in subword tokens.
    pub max_len: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings { beam: 5, max_len: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    /// Output layer of the src→std and src→tgt models.
    pub head_kind: HeadKind,
    /// Stage (e) finetunes a freshly initialized model instead of the stage (b) model.
    pub random_init: bool,
    /// Stage (d) trains tgt embeddings from random initialization.
    pub embeddings_from_scratch: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            head_kind: HeadKind::Continuous,
            random_init: false,
            embeddings_from_scratch: false,
        }
    }
}

/// Named ablation arms accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Softmax,
    RandomInit,
    ScratchEmbeddings,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Softmax, Ablation::RandomInit, Ablation::ScratchEmbeddings];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Softmax => "softmax",
            Ablation::RandomInit => "random-init",
            Ablation::ScratchEmbeddings => "scratch-embeddings",
        }
    }

    pub fn apply(self, flags: &mut AblationFlags) {
        match self {
            Ablation::Softmax => flags.head_kind = HeadKind::Softmax,
            Ablation::RandomInit => flags.random_init = true,
            Ablation::ScratchEmbeddings => flags.embeddings_from_scratch = true,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation `{s}` (softmax, random-init, scratch-embeddings)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides the `seed` of every nested section.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    pub data: DataPaths,
    #[serde(default)]
    pub bpe: BpeSettings,
    /// Stage (a) std embeddings.
    #[serde(default)]
    pub embeddings: SkipgramConfig,
    #[serde(default)]
    pub tgt_embeddings: TgtEmbeddingSettings,
    /// src→std and src→tgt model.
    #[serde(default)]
    pub model: ModelConfig,
    /// std→src model of stage (c). Its head is always softmax over learned inputs.
    #[serde(default)]
    pub reverse_model: ModelConfig,
    #[serde(default)]
    pub train_b: TrainConfig,
    #[serde(default)]
    pub train_c: TrainConfig,
    #[serde(default)]
    pub train_e: TrainConfig,
    #[serde(default)]
    pub decode: DecodeSettings,
    #[serde(default)]
    pub ablation: AblationFlags,
}

fn default_seed() -> u64 {
    1
}

fn default_run_dir() -> PathBuf {
    PathBuf::from("run")
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("pipeline config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("pipeline config: {e}")))
    }

    /// Reads a config file, resolves its relative paths and applies the global seed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::format("pipeline config", path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.apply_seed();
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [
            &mut d.train_src,
            &mut d.train_std,
            &mut d.tgt_mono,
            &mut d.dev_src,
            &mut d.dev_tgt,
            &mut d.test_src,
            &mut d.test_tgt,
        ] {
            fix(p);
        }
        for p in [&mut d.std_mono, &mut d.dev_std, &mut d.tgt_mono_src].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.run_dir);
    }

    /// Distinct seeds per component, all derived from `seed`.
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.embeddings.seed = s;
        self.model.seed = s.wrapping_add(1);
        self.reverse_model.seed = s.wrapping_add(2);
        self.train_b.seed = s.wrapping_add(3);
        self.train_c.seed = s.wrapping_add(4);
        self.train_e.seed = s.wrapping_add(5);
    }

    pub fn validate(&self) -> Result<()> {
        self.embeddings.validate()?;
        self.model.validate()?;
        self.reverse_model.validate()?;
        for tc in [&self.train_b, &self.train_c, &self.train_e] {
            tc.validate()?;
        }
        if self.model.embed_dim != self.embeddings.dim {
            return Err(Error::DimensionMismatch {
                expected: self.embeddings.dim,
                found: self.model.embed_dim,
            });
        }
        if self.model.learned_target_input {
            return Err(Error::invalid("the src→std model predicts pretrained vectors; learned_target_input is not allowed"));
        }
        if self.decode.beam == 0 || self.decode.max_len == 0 {
            return Err(Error::invalid("decode beam and max_len must be positive"));
        }
        if self.tgt_embeddings.epochs == 0 || !(self.tgt_embeddings.learning_rate > 0.0) {
            return Err(Error::invalid("tgt embedding epochs and learning rate must be positive"));
        }
        Ok(())
    }

    /// Skip-gram settings for stage (d).
    pub fn tgt_skipgram(&self) -> SkipgramConfig {
        SkipgramConfig {
            epochs: self.tgt_embeddings.epochs,
            learning_rate: self.tgt_embeddings.learning_rate,
            ..self.embeddings.clone()
        }
    }

    /// The forward model configuration with the ablation head applied.
    pub fn forward_model(&self) -> ModelConfig {
        ModelConfig {
            head_kind: self.ablation.head_kind,
            ..self.model.clone()
        }
    }
}
