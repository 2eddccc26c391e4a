mod common;

use common::*;
use varmt::mtmodel::*;
use varmt::textproc::{Origin, ParallelCorpus};

fn fixture(head: HeadKind) -> (Seq2SeqModel, ParallelCorpus) {
    let vocab = copy_vocab(12);
    let emb = plain_embedding(&vocab, 8, 3);
    let model = build_model(&small_config(head, 8, 2, 8), &Vocab::new(&vocab), &emb).unwrap();
    (model, copy_corpus(&vocab, 40, 5, &mut rng(4)))
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    for head in [HeadKind::Continuous, HeadKind::Softmax] {
        let (mut model, data) = fixture(head);
        let batch = model.prepare(&data.pairs[..3], false).unwrap();
        let err = model_gradient_error(&mut model, &batch, 50, 9);
        assert!(err < 1e-3, "{head:?}: {err}");
    }
}

#[test]
fn earlier_positions_ignore_later_target_tokens() {
    let (model, _) = fixture(HeadKind::Continuous);
    let a = model.teacher_forced_outputs(&[4, 5, 6], &[7, 8, 9, 10]).unwrap();
    let b = model.teacher_forced_outputs(&[4, 5, 6], &[7, 8, 11, 4]).unwrap();
    // input position 3 is the first that sees the changed token
    for r in 0..3 {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn frozen_tables_survive_training() {
    for head in [HeadKind::Continuous, HeadKind::Softmax] {
        let (mut model, data) = fixture(head);
        let before = model.frozen_table().clone();
        let tc = TrainConfig { max_steps: 30, batch_tokens: 64, validate_every: 0, ..TrainConfig::default() };
        let report = train(&mut model, &data, None, &tc).unwrap();
        assert_eq!(report.steps, 30);
        assert_eq!(model.frozen_table(), &before);
        if head == HeadKind::Continuous {
            let out = model.output_table().unwrap();
            assert_eq!(&out.data[NUM_SPECIALS * 8..], &before.data[..]);
        }
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let run = || {
        let (mut model, data) = fixture(HeadKind::Continuous);
        let tc = TrainConfig { max_steps: 60, batch_tokens: 80, lr_initial: 3e-3, validate_every: 0, ..TrainConfig::default() };
        let report = train(&mut model, &data, None, &tc).unwrap();
        (model, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let head: f64 = ra.losses[..10].iter().sum();
    let tail: f64 = ra.losses[50..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn early_stopping_restores_best_parameters() {
    let (mut model, data) = fixture(HeadKind::Softmax);
    let tc = TrainConfig {
        max_steps: 40,
        batch_tokens: 64,
        lr_initial: 5e-2,
        validate_every: 5,
        patience: Some(2),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, Some(&data), &tc).unwrap();
    let best = report.best_step.unwrap();
    let best_loss = report.validations.iter().find(|v| v.0 == best).unwrap().1;
    assert!(report.validations.iter().all(|v| v.1 >= best_loss));
    let all = model.prepare(&data.pairs, false).unwrap();
    let refs: Vec<&Example> = all.iter().collect();
    assert!((model.loss(&refs).unwrap() - best_loss).abs() < 1e-9);
}

#[test]
fn overfits_one_pair_and_decodes_it() {
    for head in [HeadKind::Continuous, HeadKind::Softmax] {
        let (mut model, _) = fixture(head);
        let pair = ParallelCorpus::new(vec![("c1 c2 c3".into(), "c4 c5 c6 c7".into())], Origin::Gold).unwrap();
        let tc = TrainConfig { max_steps: 150, lr_initial: 1e-2, validate_every: 0, ..TrainConfig::default() };
        train(&mut model, &pair, None, &tc).unwrap();
        let out = translate_batch(&model, &["c1 c2 c3".to_string()], &DecodeOptions::default()).unwrap();
        assert_eq!(out[0].tokens.join(" "), "c4 c5 c6 c7", "{head:?}");
        assert!(!out[0].truncated);
    }
}

#[test]
fn greedy_width_one_beam_and_batching_agree() {
    let (mut model, data) = fixture(HeadKind::Softmax);
    let tc = TrainConfig { max_steps: 20, batch_tokens: 64, validate_every: 0, ..TrainConfig::default() };
    train(&mut model, &data, None, &tc).unwrap();
    let sents: Vec<String> = data.pairs[..5].iter().map(|p| p.0.clone()).collect();
    let batch = translate_batch(&model, &sents, &DecodeOptions::default()).unwrap();
    for (s, t) in sents.iter().zip(&batch) {
        assert_eq!(&translate_beam(&model, s, 1).unwrap(), t);
    }
    let (cont, data) = fixture(HeadKind::Continuous);
    let opts = DecodeOptions { batch_size: 2, ..DecodeOptions::default() };
    let sents: Vec<String> = data.pairs[..5].iter().map(|p| p.0.clone()).collect();
    let batched = translate_batch(&cont, &sents, &opts).unwrap();
    for (s, t) in sents.iter().zip(&batched) {
        assert_eq!(&translate_greedy(&cont, s).unwrap(), t);
    }
    // untrained continuous models rarely pick `</s>`
    assert!(batched.iter().all(|t| t.tokens.len() <= cont.config().max_len));
}

#[test]
fn empty_and_unknown_sources() {
    let (model, _) = fixture(HeadKind::Continuous);
    let out = translate_batch(&model, &["".into(), "zzz c1".into()], &DecodeOptions::default()).unwrap();
    assert!(out[0].tokens.is_empty());
    let strict = DecodeOptions { map_unknown: false, ..DecodeOptions::default() };
    assert!(translate_batch(&model, &["zzz".into()], &strict).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for head in [HeadKind::Continuous, HeadKind::Softmax] {
        let (model, _) = fixture(head);
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        save_model(&model, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.src_vocab(), model.src_vocab());
        assert_eq!(loaded.tgt_vocab(), model.tgt_vocab());
        assert_eq!(loaded.config(), model.config());
        for i in 0..model.params().len() {
            let (a, b) = (model.params().get(i), loaded.params().get(i));
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        let mut bytes = std::fs::read(&p1).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p2, &bytes).unwrap();
        assert!(load_model(&p2).is_err());
        std::fs::write(&p2, b"VMMT0rest").unwrap();
        assert!(load_model(&p2).is_err());
    }
}

#[test]
fn finetune_swaps_target_tables() {
    let vocab = copy_vocab(12);
    let new_vocab: Vec<String> = vocab[..8].iter().cloned().chain(["n1".to_string(), "n2".to_string()]).collect();
    let new_emb = plain_embedding(&new_vocab, 8, 21);
    for head in [HeadKind::Continuous, HeadKind::Softmax] {
        let (mut model, _) = fixture(head);
        let old = model.clone();
        let data = ParallelCorpus::new(vec![("c1 c2".into(), "n1 c3".into())], Origin::Pseudo).unwrap();
        let tc = TrainConfig { max_steps: 0, ..TrainConfig::default() };
        finetune(&mut model, &new_emb, &data, None, &tc).unwrap();
        assert_eq!(model.tgt_vocab().len(), NUM_SPECIALS + 10);
        assert_eq!(model.frozen_table().rows, 10);
        assert_eq!(model.src_vocab(), old.src_vocab());
        if head == HeadKind::Softmax {
            let w = |m: &Seq2SeqModel| m.params().get(m.params().id("head.w").unwrap()).clone();
            let (nw, ow) = (w(&model), w(&old));
            assert_eq!(nw.cols, NUM_SPECIALS + 10);
            let old_col = old.tgt_vocab().id("c5").unwrap();
            let new_col = model.tgt_vocab().id("c5").unwrap();
            for r in 0..nw.rows {
                assert_eq!(nw.data[r * nw.cols + new_col], ow.data[r * ow.cols + old_col]);
            }
        } else {
            let enc = |m: &Seq2SeqModel| m.params().get(m.params().id("enc.embed").unwrap()).clone();
            assert_eq!(enc(&model), enc(&old));
        }
        let tc = TrainConfig { max_steps: 3, validate_every: 0, ..TrainConfig::default() };
        assert!(finetune(&mut model, &new_emb, &data, None, &tc).is_ok());
    }
    // same embeddings and no steps: nothing changes
    let (mut model, data) = fixture(HeadKind::Softmax);
    let old = model.clone();
    let emb = plain_embedding(&copy_vocab(12), 8, 3);
    finetune(&mut model, &emb, &data, None, &TrainConfig { max_steps: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(model, old);
}

#[test]
fn single_pair_loss_falls_below_a_tenth() {
    let vocab = copy_vocab(12);
    let emb = plain_embedding(&vocab, 8, 3);
    let cfg = ModelConfig { label_smoothing: 0.0, ..small_config(HeadKind::Softmax, 8, 2, 8) };
    let mut model = build_model(&cfg, &Vocab::new(&vocab), &emb).unwrap();
    let pair = ParallelCorpus::new(vec![("c1 c2 c3".into(), "c4 c5 c6 c7".into())], Origin::Gold).unwrap();
    let tc = TrainConfig { max_steps: 2000, lr_initial: 3e-3, validate_every: 0, ..TrainConfig::default() };
    let report = train(&mut model, &pair, None, &tc).unwrap();
    let first = report.losses[0];
    let hit = report.losses.iter().position(|l| *l < 0.1 * first);
    assert!(hit.is_some(), "final {}", report.final_loss().unwrap());
    let window = |i: usize| report.losses[i..i + 100].iter().sum::<f64>();
    assert!(window(0) > window(100) && window(100) > window(200));
}

#[test]
fn standard_model_learns_its_input_table() {
    let src = Vocab::new(copy_vocab(6));
    let tgt = Vocab::new(["p", "q", "r"]);
    let cfg = small_config(HeadKind::Continuous, 8, 1, 6);
    let mut model = build_standard_model(&cfg, &src, &tgt).unwrap();
    assert_eq!(model.head_kind(), HeadKind::Softmax);
    assert_eq!(model.frozen_table().rows, 0);
    let id = model.params().id("dec.embed").unwrap();
    let before = model.params().get(id).clone();
    let data = ParallelCorpus::new(vec![("c1 c2".into(), "q r".into()), ("c3".into(), "p".into())], Origin::Gold).unwrap();
    train(&mut model, &data, None, &TrainConfig { max_steps: 5, validate_every: 0, ..TrainConfig::default() }).unwrap();
    assert_ne!(model.params().get(id), &before);
    assert!(translate_greedy(&model, "c1").is_err());
    assert!(finetune(&mut model, &plain_embedding(&copy_vocab(3), 6, 1), &data, None, &TrainConfig::default()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    save_model(&model, &p).unwrap();
    let loaded = load_model(&p).unwrap();
    assert_eq!(translate_beam(&loaded, "c1 c2", 3).unwrap(), translate_beam(&model, "c1 c2", 3).unwrap());
    let emb = plain_embedding(&copy_vocab(3), 6, 1);
    let bad = ModelConfig { learned_target_input: true, ..small_config(HeadKind::Continuous, 8, 1, 6) };
    assert!(build_model(&bad, &src, &emb).is_err());
}
