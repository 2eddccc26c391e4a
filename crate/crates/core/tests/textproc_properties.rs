use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varmt::pipeline::{
    generate_synthetic_pair, shared_token_count, shared_token_count_separate, LexiconSizes, SyntheticGrammar, SyntheticVarietySpec,
};
use varmt::textproc::{apply_bpe, learn_bpe, learn_joint_bpe, restore_bpe, MonoCorpus};

fn cyrillic_corpus(n: usize, seed: u64) -> MonoCorpus {
    let g = SyntheticGrammar::new(seed, LexiconSizes::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut sentences: Vec<String> = g.sample_many(n, &mut rng).into_iter().map(|p| p.1).collect();
    // punctuation, capitals and a stray marker-like token
    sentences[0] = format!("Привет, {}!", sentences[0]);
    sentences[1] = format!("{} @@ ёж", sentences[1]);
    MonoCorpus::new("std", sentences).unwrap()
}

#[test]
fn restore_inverts_apply_on_cyrillic_text() {
    let corpus = cyrillic_corpus(1000, 1);
    for merges in [0, 50, 400, 5000] {
        let codes = learn_bpe(&corpus, merges).unwrap();
        for s in &corpus.sentences {
            let toks = apply_bpe(&codes, s);
            let normalized = s.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(restore_bpe(&toks).unwrap(), normalized, "merges={merges}");
        }
    }
}

#[test]
fn learning_is_deterministic() {
    let corpus = cyrillic_corpus(1000, 2);
    let a = learn_bpe(&corpus, 300).unwrap();
    let b = learn_bpe(&corpus.clone(), 300).unwrap();
    assert_eq!(a.merges(), b.merges());
}

#[test]
fn joint_codes_share_at_least_as_many_tokens_as_separate_codes() {
    let std = cyrillic_corpus(3000, 3);
    let spec = SyntheticVarietySpec::default_for(&std, 50, 3).unwrap();
    let (tgt, _) = generate_synthetic_pair(&spec, &std, 4).unwrap();
    let tgt = MonoCorpus::new("tgt", tgt.sentences[..1000].to_vec()).unwrap();
    for merges in [100, 500, 2000] {
        let joint = learn_joint_bpe(&std, &tgt, merges).unwrap();
        let sep = shared_token_count_separate(&std, &learn_bpe(&std, merges).unwrap(), &tgt, &learn_bpe(&tgt, merges).unwrap());
        let shared = shared_token_count(&std, &tgt, &joint);
        assert!(shared >= sep, "merges={merges}: joint {shared} < separate {sep}");
    }
}
