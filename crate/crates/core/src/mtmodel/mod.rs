//! Transformer encoder-decoder with a continuous (vMF) or softmax output head.
mod checkpoint;
mod decode;
pub mod graph;
mod model;
mod optim;
mod train;
mod vocab;
pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC};
pub use decode::{
    beam_search, beam_softmax, greedy_continuous, nearest_row, translate_batch, translate_beam, translate_greedy,
    DecodeOptions, Hypothesis, StepScorer, Translation,
};
pub use model::{build_model, build_standard_model, Example, HeadKind, ModelConfig, ParamStore, Seq2SeqModel};
pub use optim::{RAdam, RAdamConfig};
pub use train::{finetune, train, TrainConfig, TrainReport};
pub use vocab::{Vocab, BOS, EOS, NUM_SPECIALS, PAD, SPECIALS, UNK};
