mod common;

use common::*;
use varmt::backtranslate::*;
use varmt::mtmodel::{HeadKind, ModelConfig, TrainConfig, Translation};
use varmt::textproc::{MonoCorpus, Origin, ParallelCorpus};
use varmt::Result;

struct Identity;

impl SentenceTranslator for Identity {
    fn translate(&self, s: &str) -> Result<Translation> {
        Ok(Translation {
            tokens: s.split_whitespace().map(String::from).collect(),
            truncated: false,
        })
    }
}

/// Fails on sentences containing "boom"; reverses the rest.
struct Flaky;

impl SentenceTranslator for Flaky {
    fn translate(&self, s: &str) -> Result<Translation> {
        if s.contains("boom") {
            return Err(varmt::Error::InvalidArgument("boom".into()));
        }
        Ok(Translation {
            tokens: s.split_whitespace().rev().map(String::from).collect(),
            truncated: s.len() > 10,
        })
    }
}

#[test]
fn identity_translator_pairs_each_sentence_with_itself() {
    let mono = MonoCorpus::from_strs("tgt", &["а б в", "г", "ґ є і ї"]).unwrap();
    let (corpus, stats) = synthesize_pseudo_parallel(&Identity, &mono).unwrap();
    assert_eq!(corpus.origin, Origin::Pseudo);
    assert_eq!(corpus.len(), 3);
    for (p, s) in corpus.pairs.iter().zip(&mono.sentences) {
        assert_eq!(&p.0, s);
        assert_eq!(p.1.as_bytes(), s.as_bytes());
    }
    assert_eq!(stats, SynthesisStats { input_sentences: 3, kept: 3, dropped: 0, truncated: 0 });
}

#[test]
fn failures_and_empty_outputs_are_dropped_in_order() {
    let mono = MonoCorpus::from_strs("tgt", &["a b", "boom x", "", "c d e f g h", "y"]).unwrap();
    let (corpus, stats) = synthesize_pseudo_parallel(&Flaky, &mono).unwrap();
    let tgts: Vec<&str> = corpus.pairs.iter().map(|p| p.1.as_str()).collect();
    assert_eq!(tgts, ["a b", "c d e f g h", "y"]);
    assert_eq!(corpus.pairs[0].0, "b a");
    assert_eq!((stats.kept, stats.dropped, stats.truncated), (3, 2, 1));
    let all_fail = MonoCorpus::from_strs("tgt", &["boom"]).unwrap();
    assert!(synthesize_pseudo_parallel(&Flaky, &all_fail).is_err());
}

#[test]
fn pseudo_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("pseudo");
    let mono = MonoCorpus::from_strs("tgt", &["a b", "c"]).unwrap();
    let (corpus, stats) = synthesize_pseudo_parallel(&Flaky, &mono).unwrap();
    write_pseudo_corpus(&corpus, &stats, &stem).unwrap();
    for p in pseudo_paths(&stem) {
        assert!(p.exists(), "{}", p.display());
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("pseudo.src")).unwrap(), "b a\nc\n");
    let (back, s2) = read_pseudo_corpus(&stem).unwrap();
    assert_eq!(back, corpus);
    assert_eq!(s2, stats);
}

#[test]
fn reverse_training_preconditions() {
    let cfg = small_config(HeadKind::Softmax, 8, 1, 8);
    let empty = ParallelCorpus::new(vec![], Origin::Gold).unwrap();
    assert!(train_reverse_model(&empty, &cfg, &TrainConfig::default(), None).is_err());
    let pseudo = ParallelCorpus::new(vec![("a".into(), "b".into())], Origin::Pseudo).unwrap();
    assert!(train_reverse_model(&pseudo, &cfg, &TrainConfig::default(), None).is_err());
}

#[test]
fn reverse_model_direction_and_code_mismatch() {
    let std_src = ParallelCorpus::new(
        vec![("сс1 сс2".into(), "s1 s2".into()), ("сс3".into(), "s3".into())],
        Origin::Gold,
    )
    .unwrap();
    let cfg = small_config(HeadKind::Continuous, 8, 1, 8);
    let tc = TrainConfig { max_steps: 3, validate_every: 0, ..TrainConfig::default() };
    let model = train_reverse_model(&std_src, &cfg, &tc, None).unwrap();
    assert_eq!(model.head_kind(), HeadKind::Softmax);
    assert!(model.src_vocab().id("сс2").is_some() && model.src_vocab().id("s2").is_none());
    assert!(model.tgt_vocab().id("s2").is_some() && model.tgt_vocab().id("сс2").is_none());

    let translator = ModelTranslator::new(&model);
    let foreign = MonoCorpus::from_strs("tgt", &["zz yy"]).unwrap();
    assert!(synthesize_pseudo_parallel(&translator, &foreign).is_err());
    let mixed = MonoCorpus::from_strs("tgt", &["сс1 нове", "сс3"]).unwrap();
    let a = synthesize_pseudo_parallel(&translator, &mixed).unwrap();
    let b = synthesize_pseudo_parallel(&translator, &mixed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reverse_model_learns_an_identity_pair() {
    let vocab = copy_vocab(20);
    let mut r = rng(8);
    let train_set = copy_corpus(&vocab, 1500, 6, &mut r);
    let held = copy_corpus(&vocab, 60, 6, &mut r);
    let cfg = ModelConfig { num_heads: 4, ..small_config(HeadKind::Softmax, 32, 2, 32) };
    let tc = TrainConfig { max_steps: 1500, batch_tokens: 400, lr_initial: 2e-3, validate_every: 0, ..TrainConfig::default() };
    let model = train_reverse_model(&train_set, &cfg, &tc, None).unwrap();
    let mono = held.src_side("tgt");
    let (pseudo, stats) = synthesize_pseudo_parallel(&ModelTranslator::new(&model), &mono).unwrap();
    assert_eq!(stats.dropped, 0);
    let hyps: Vec<Vec<String>> = pseudo.pairs.iter().map(|p| p.0.split_whitespace().map(String::from).collect()).collect();
    let acc = token_accuracy(&hyps, &mono.sentences);
    assert!(acc >= 0.95, "copy accuracy {acc}");
}
