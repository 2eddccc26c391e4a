//! Corpus ingestion, BPE learning and segmentation, and character n-gram extraction.

mod bpe;
mod corpus;
mod ngrams;

pub use bpe::{
    apply_bpe, apply_bpe_corpus, learn_bpe, learn_joint_bpe, restore_bpe, restore_surfaces_lenient,
    BpeCodes, SubwordToken, CODES_HEADER, DEFAULT_MARKER,
};
pub use corpus::{write_lines, MonoCorpus, Origin, ParallelCorpus};
pub use ngrams::{char_ngrams, extract_ngrams, BOW, EOW};
