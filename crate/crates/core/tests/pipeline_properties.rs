use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varmt::pipeline::*;
use varmt::textproc::MonoCorpus;
use varmt::Error;

fn tiny_experiment(dir: &Path) -> PipelineConfig {
    let settings = SynthSettings {
        train_pairs: 300,
        std_mono: 300,
        tgt_mono: 80,
        dev: 20,
        test: 20,
        ..SynthSettings::default()
    };
    let path = write_synthetic_experiment(dir, &settings).unwrap();
    let mut cfg = PipelineConfig::load(path).unwrap();
    cfg.bpe = BpeSettings {
        src_merges: 100,
        joint_merges: 150,
    };
    cfg.embeddings.dim = 16;
    cfg.embeddings.epochs = 2;
    cfg.embeddings.bucket_count = 5000;
    cfg.tgt_embeddings.epochs = 1;
    for m in [&mut cfg.model, &mut cfg.reverse_model] {
        m.d_model = 16;
        m.embed_dim = 16;
        m.num_layers_enc = 1;
        m.num_layers_dec = 1;
        m.num_heads = 2;
        m.ffn_dim = 32;
        m.max_len = 30;
    }
    for t in [&mut cfg.train_b, &mut cfg.train_c, &mut cfg.train_e] {
        t.max_steps = 6;
        t.validate_every = 3;
        t.batch_tokens = 200;
    }
    cfg.decode = DecodeSettings { beam: 2, max_len: 12 };
    cfg
}

#[test]
fn synthetic_variety_overlaps_partially_with_std() {
    let g = SyntheticGrammar::new(5, LexiconSizes::default());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let std = MonoCorpus::new("std", g.sample_many(10_000, &mut rng).into_iter().map(|p| p.1).collect()).unwrap();
    let spec = SyntheticVarietySpec::default_for(&std, 50, 7).unwrap();
    let (tgt, gold) = generate_synthetic_pair(&spec, &std, 8).unwrap();
    let overlap = vocabulary_overlap(&std, &tgt);
    assert!((0.3..=0.9).contains(&overlap), "overlap {overlap}");
    assert!(!gold.words.is_empty());
    for (s, t) in std.sentences.iter().zip(&tgt.sentences).take(500) {
        assert_eq!(&spec.invert_sentence(t), s);
    }
}

#[test]
fn empty_variety_spec_is_identity() {
    let g = SyntheticGrammar::new(1, LexiconSizes::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let std = MonoCorpus::new("std", g.sample_many(200, &mut rng).into_iter().map(|p| p.1).collect()).unwrap();
    let (tgt, _) = generate_synthetic_pair(&SyntheticVarietySpec::default(), &std, 1).unwrap();
    assert_eq!(tgt.sentences, std.sentences);
}

#[test]
fn stages_cache_rerun_and_regenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());

    let first = run_all(&cfg, false).unwrap();
    assert!(first.iter().all(|o| !o.cached));
    assert!(first[4].test_bleu().is_some());
    let second = run_all(&cfg, false).unwrap();
    assert!(second.iter().all(|o| o.cached));

    // forced reruns reproduce every output byte for byte
    let forced = run_all(&cfg, true).unwrap();
    for (a, b) in first.iter().zip(&forced) {
        assert!(!b.cached);
        assert_eq!(a.manifest.outputs, b.manifest.outputs, "stage {}", a.stage);
    }

    // a deleted stage is regenerated alone; downstream sees unchanged inputs
    std::fs::remove_dir_all(stage_dir(&cfg, Stage::D)).unwrap();
    let d = run_stage(&cfg, Stage::D, false).unwrap();
    assert!(!d.cached);
    assert_eq!(d.manifest.outputs, first[3].manifest.outputs);
    assert!(run_stage(&cfg, Stage::E, false).unwrap().cached);

    // a config change touching only (e) leaves the others cached
    let mut changed = cfg.clone();
    changed.train_e.max_steps = 4;
    let outs = run_all(&changed, false).unwrap();
    assert_eq!(outs.iter().map(|o| o.cached).collect::<Vec<_>>(), [true, true, true, true, false]);

    // a tampered output invalidates the cache
    let hyp = stage_dir(&changed, Stage::E).join("test.hyp");
    std::fs::write(&hyp, "x\n").unwrap();
    assert!(!run_stage(&changed, Stage::E, false).unwrap().cached);
}

#[test]
fn missing_dependency_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    for stage in [Stage::B, Stage::C, Stage::D, Stage::E] {
        match run_stage(&cfg, stage, false) {
            Err(Error::Stage { stage: s, reason }) => {
                assert_eq!(s, stage.letter());
                assert!(reason.contains("missing"), "{reason}");
            }
            other => panic!("stage {stage}: {:?}", other.map(|o| o.dir)),
        }
    }
}

#[test]
fn ablation_arms_write_to_their_own_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(dir.path());
    let names = |c: &PipelineConfig| Stage::ALL.map(|s| stage_dir_name(c, s));
    assert_eq!(names(&cfg), ["a", "b", "c", "d", "e"]);
    assert_eq!(
        names(&with_ablation(&cfg, Ablation::Softmax)),
        ["a", "b-softmax", "c", "d", "e-softmax"]
    );
    assert_eq!(
        names(&with_ablation(&cfg, Ablation::ScratchEmbeddings)),
        ["a", "b", "c", "d-scratch-embeddings", "e-scratch-embeddings"]
    );
    assert_eq!(names(&with_ablation(&cfg, Ablation::RandomInit)), ["a", "b", "c", "d", "e-random-init"]);
}
