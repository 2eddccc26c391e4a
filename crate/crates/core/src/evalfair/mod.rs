//! Translation quality (BLEU, rare-word recall) and fairness of quality across varieties.
mod bleu;
mod fairness;
mod rare;

pub use bleu::{bleu, bleu_with, compute_bleu, tokenize_13a, BleuConfig, BleuScore, Smoothing, MAX_ORDER};
pub use fairness::{
    entropy_decomposition, generalized_entropy, macro_avg, max_min, parse_named_values, pop_weighted_avg,
    read_named_values, unfairness_from_bleu, BenefitVector, EntropyDecomposition, FairnessReport, Group,
};
pub use rare::{default_buckets, frequency_table, rare_word_accuracy, BucketAccuracy, FrequencyBucket};
