use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varmt::evalfair::*;

struct Fixture {
    hyps: &'static [&'static str],
    refs: &'static [&'static str],
    /// Scores under no, exp, floor(0.1) and add-k(1) smoothing, from the reference implementation.
    scores: [f64; 4],
    bp: f64,
}

const FIXTURES: [Fixture; 6] = [
    Fixture {
        hyps: &["the cat sat on the mat"],
        refs: &["the cat sat on the mat ."],
        scores: [84.64817248906144; 4],
        bp: 0.846481724890614,
    },
    Fixture {
        hyps: &["the cat is on the mat", "there is a cat on the mat"],
        refs: &["the cat sat on the mat", "a cat is on the mat"],
        scores: [0.0, 29.256127307315065, 19.5647514979229, 36.884962701959225],
        bp: 1.0,
    },
    Fixture {
        hyps: &["Hello, world! It's 3.5 degrees-ish.", "Prices rose 5-10% in 2019."],
        refs: &["Hello world, it is 3.5 degrees.", "Prices rose by 5-10 % in 2019."],
        scores: [45.399203043163425, 45.399203043163425, 45.399203043163425, 49.09853554512602],
        bp: 0.9428731438548749,
    },
    Fixture {
        hyps: &["я ніколи не думав про це", "вони мають однакову кількість вуглецю"],
        refs: &["я ніколи не думав про прихований зв'язок .", "вони мають однакову кількість вуглецю ."],
        scores: [65.68338828648766, 65.68338828648766, 65.68338828648766, 66.90756246264654],
        bp: 0.7613003866968737,
    },
    Fixture {
        hyps: &["the cat sat"],
        refs: &["the cat sat down"],
        scores: [0.0, 0.0, 0.0, 71.65313105737896],
        bp: 0.7165313105737893,
    },
    Fixture {
        hyps: &["x y z w", "q"],
        refs: &["x y z w", "q r s"],
        scores: [67.03200460356396; 4],
        bp: 0.6703200460356393,
    },
];

#[test]
fn bleu_matches_reference_fixtures() {
    let methods = [Smoothing::None, Smoothing::Exp, Smoothing::Floor(0.1), Smoothing::AddK(1.0)];
    for (i, f) in FIXTURES.iter().enumerate() {
        for (m, want) in methods.iter().zip(f.scores) {
            let s = bleu_with(f.hyps, f.refs, &BleuConfig { smoothing: *m, lowercase: false }).unwrap();
            assert!((s.score - want).abs() < 1e-9, "fixture {i} {m:?}: {} vs {want}", s.score);
            assert!((s.brevity_penalty - f.bp).abs() < 1e-12);
        }
    }
}

#[test]
fn short_hypothesis_statistics() {
    // three of four reference words, no 4-gram in the hypothesis
    let s = bleu(&["the cat sat"], &["the cat sat down"]).unwrap();
    assert_eq!(s.matches, [3, 2, 1, 0]);
    assert_eq!(s.totals, [3, 2, 1, 0]);
    assert_eq!(&s.precisions[..3], &[100.0, 100.0, 100.0]);
    assert_eq!(s.score, 0.0);
}

#[test]
fn brevity_penalty_closed_form() {
    let s = bleu(&["a b c d e f g h i"], &["a b c d e f g h i j"]).unwrap();
    assert_eq!((s.hyp_len, s.ref_len), (9, 10));
    assert!((s.brevity_penalty - (1.0f64 - 10.0 / 9.0).exp()).abs() < 1e-12);
    assert!((s.brevity_penalty - 0.8948).abs() < 1e-4);
}

#[test]
fn identity_bounds_and_order_invariance() {
    let refs = ["один два три чотири п'ять", "the quick brown fox jumps", "x y z w v u"];
    assert_eq!(bleu(&refs, &refs).unwrap().score, 100.0);
    let hyps = ["один два три чотири", "the quick fox jumps over", "x y z w v"];
    let s = bleu(&hyps, &refs).unwrap();
    assert!((0.0..=100.0).contains(&s.score));
    let rh = [hyps[2], hyps[0], hyps[1]];
    let rr = [refs[2], refs[0], refs[1]];
    assert_eq!(bleu(&rh, &rr).unwrap().score, s.score);
}

#[test]
fn rare_word_buckets_by_hand() {
    let freq: HashMap<String, usize> = [("a", 1), ("b", 2), ("c", 3), ("d", 4), ("e", 7), ("f", 50), ("g", 500), ("h", 2000)]
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    let refs = ["a b c d e", "a f g h b"];
    let hyps = ["a c x", "f f b"];
    let got = rare_word_accuracy(&hyps, &refs, &freq, &default_buckets()).unwrap();
    let acc: Vec<Option<f64>> = got.iter().map(|b| b.accuracy).collect();
    assert_eq!(acc, [Some(0.5), Some(0.5), Some(1.0), Some(0.0), Some(0.0), Some(1.0), Some(0.0)]);

    let same = rare_word_accuracy(&refs, &refs, &freq, &default_buckets()).unwrap();
    assert!(same.iter().all(|b| b.accuracy == Some(1.0)));
    let empty = rare_word_accuracy(&["", ""], &refs, &freq, &default_buckets()).unwrap();
    assert!(empty.iter().all(|b| b.accuracy == Some(0.0)));

    let sparse: HashMap<String, usize> = [("a".to_string(), 1)].into_iter().collect();
    let got = rare_word_accuracy(&hyps, &refs, &sparse, &default_buckets()).unwrap();
    assert_eq!(got[0].accuracy, Some(0.5));
    assert!(got[1..].iter().all(|b| b.accuracy.is_none()));
}

#[test]
fn repeated_words_match_once_per_hypothesis_occurrence() {
    let freq = frequency_table(&["w w w"]);
    let got = rare_word_accuracy(&["w"], &["w w"], &freq, &default_buckets()).unwrap();
    assert_eq!((got[2].occurrences, got[2].matched), (2, 1));
}

fn bv(b: &[f64]) -> BenefitVector {
    BenefitVector::from_benefits(b).unwrap()
}

#[test]
fn published_aggregates_recomputed() {
    assert!((max_min(&bv(&[21.2, 20.1, 8.1, 7.4, 4.6])) - 16.6).abs() < 1e-9);
    assert!((max_min(&bv(&[21.2, 3.7, 1.8, 2.0, 1.3])) - 19.9).abs() < 1e-9);
    // the mean is exactly 10.05, on the edge of the published 10.0 ± 0.05
    let ours = macro_avg(&bv(&[20.1, 8.1, 7.4, 4.6]));
    assert!((ours - 10.05).abs() < 1e-12);
    assert!((ours - 10.0).abs() <= 0.05 + 1e-12);
    let softmax = macro_avg(&bv(&[14.5, 7.4, 4.9, 3.9]));
    assert!((softmax - 7.675).abs() < 1e-9);
    assert_eq!(format!("{softmax:.1}"), "7.7");
    assert_eq!(macro_avg(&bv(&[3.5])), 3.5);
    assert_eq!(max_min(&bv(&[2.0, 2.0, 2.0])), 0.0);
}

#[test]
fn population_weighting() {
    let b = BenefitVector::new(vec![
        Group { name: "x".into(), population: 1.0, benefit: 10.0 },
        Group { name: "y".into(), population: 3.0, benefit: 2.0 },
    ])
    .unwrap();
    assert_eq!(pop_weighted_avg(&b).unwrap(), 4.0);
    let eq = bv(&[3.0, 7.5, 11.25]);
    assert_eq!(pop_weighted_avg(&eq).unwrap(), macro_avg(&eq));
    assert!(BenefitVector::new(vec![Group { name: "z".into(), population: 0.0, benefit: 1.0 }]).is_err());
}

#[test]
fn entropy_hand_values() {
    assert_eq!(generalized_entropy(&[0.3, 0.3, 0.3], 2.0).unwrap(), 0.0);
    assert!((generalized_entropy(&[1.0, 3.0], 2.0).unwrap() - 0.125).abs() < 1e-12);
    assert!((generalized_entropy(&[1.0, 1.0, 3.0, 3.0], 2.0).unwrap() - 0.125).abs() < 1e-12);
    let d = entropy_decomposition(&[vec![1.0, 1.0], vec![3.0, 3.0]], 2.0).unwrap();
    assert!(d.within.abs() < 1e-15);
    assert!((d.between - 0.125).abs() < 1e-12);
    assert!((d.total - 0.125).abs() < 1e-12);
    let one = entropy_decomposition(&[vec![0.2, 0.5, 0.9]], 3.0).unwrap();
    assert!((one.within - one.total).abs() < 1e-15);
    assert!(one.between.abs() < 1e-15);
}

#[test]
fn entropy_identities_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..100 {
        let n = rng.gen_range(2..30);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let alpha = [-1.0, 0.5, 2.0, 3.0][case % 4];
        let e = generalized_entropy(&b, alpha).unwrap();

        let mut shuffled = b.clone();
        shuffled.shuffle(&mut rng);
        let k = rng.gen_range(1..=n.min(5));
        let mut groups = vec![Vec::new(); k];
        for (i, v) in shuffled.iter().enumerate() {
            groups[if i < k { i } else { rng.gen_range(0..k) }].push(*v);
        }
        let d = entropy_decomposition(&groups, alpha).unwrap();
        assert!((d.within + d.between - d.total).abs() < 1e-10, "case {case}");
        assert!((d.total - e).abs() < 1e-10, "case {case}");

        let c = rng.gen_range(0.1..10.0);
        let scaled: Vec<f64> = b.iter().map(|v| v * c).collect();
        assert!((generalized_entropy(&scaled, alpha).unwrap() - e).abs() < 1e-10);

        let mu = b.iter().sum::<f64>() / n as f64;
        let var = b.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
        let half_cv2 = 0.5 * var / (mu * mu);
        assert!((generalized_entropy(&b, 2.0).unwrap() - half_cv2).abs() < 1e-12);
    }
}

#[test]
fn unfairness_from_bleu_scores() {
    let single = unfairness_from_bleu(&bv(&[12.0]), 2.0, None).unwrap();
    assert_eq!(single.unfair_total, 0.0);
    let r = unfairness_from_bleu(&bv(&[1.0, 21.0]), 2.0, None).unwrap();
    // mean 0.11, deviation 0.10
    let want = 0.5 * (0.10f64 / 0.11).powi(2);
    assert!((r.unfair_total - want).abs() < 1e-12);
    assert!((r.unfair_total - 0.4132).abs() < 1e-4);
    assert!(r.unfair_within.abs() < 1e-15);
    assert!((r.unfair_between - r.unfair_total).abs() < 1e-12);

    // populations behave like repeated individuals
    let weighted = BenefitVector::new(vec![
        Group { name: "a".into(), population: 2.0, benefit: 10.0 },
        Group { name: "b".into(), population: 1.0, benefit: 30.0 },
    ])
    .unwrap();
    let r = unfairness_from_bleu(&weighted, 2.0, None).unwrap();
    let direct = generalized_entropy(&[0.1, 0.1, 0.3], 2.0).unwrap();
    assert!((r.unfair_total - direct).abs() < 1e-12);
}

#[test]
fn averages_can_exclude_the_standard_variety() {
    let names = ["msa", "egy", "lev", "glf", "mag"];
    let scores = [21.2, 20.1, 8.1, 7.4, 4.6];
    let groups = names
        .iter()
        .zip(scores)
        .map(|(n, s)| Group { name: n.to_string(), population: 1.0, benefit: s })
        .collect();
    let b = BenefitVector::new(groups).unwrap();
    let dialects: Vec<String> = names[1..].iter().map(|s| s.to_string()).collect();
    let r = unfairness_from_bleu(&b, 2.0, Some(&dialects)).unwrap();
    assert!((r.avg_l - 10.05).abs() < 1e-12);
    assert!((r.max_min - 16.6).abs() < 1e-9);
    assert_eq!(r.spread_groups.len(), 5);
    assert!(unfairness_from_bleu(&b, 2.0, Some(&["xx".to_string()])).is_err());
}
