//! Experiment orchestration: configuration, the five training stages, and synthetic data.

pub mod config;
pub mod dataset;
pub mod manifest;
pub mod stages;
pub mod synthetic;

pub use config::{Ablation, AblationFlags, BpeSettings, DataPaths, DecodeSettings, PipelineConfig, TgtEmbeddingSettings};
pub use dataset::{desk_config, write_synthetic_experiment, SynthSettings};
pub use manifest::{sha256_file, Manifest, MANIFEST_FILE};
pub use stages::{
    run_all, run_stage, run_stage_a, run_stage_b, run_stage_c, run_stage_d, run_stage_e, shared_token_count,
    shared_token_count_separate, stage_dir, stage_dir_name, with_ablation, Stage, StageOutcome,
};
pub use synthetic::{
    generate_synthetic_pair, vocabulary_overlap, CharRule, GoldMapping, LexicalRule, LexiconSizes, SyntheticGrammar,
    SyntheticVarietySpec,
};
