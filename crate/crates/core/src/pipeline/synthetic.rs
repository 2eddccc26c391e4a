//! Seeded toy languages: a Latin-script source, a Cyrillic-script "standard" target with
//! case and tense suffixes, and a related variety derived from the standard by character
//! and word substitutions.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::MonoCorpus;

const SRC_CONSONANTS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch"];
const SRC_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ea", "oo"];
// repeated letters are drawn more often
const STD_CONSONANTS: &[&str] = &[
    "б", "в", "г", "д", "ж", "з", "к", "л", "м", "н", "п", "р", "с", "т", "ф", "х", "ч", "ш", "щ", "в", "д", "к", "л",
    "м", "н", "п", "р", "с", "т",
];
const STD_VOWELS: &[&str] = &["а", "е", "и", "о", "у", "ы", "э", "я", "а", "е", "и", "о"];
/// Standard letter → variety letter outside the standard alphabet.
const CHAR_RULE_CANDIDATES: &[(char, char)] = &[
    ('г', 'ґ'),
    ('ж', 'ў'),
    ('щ', 'ї'),
    ('ф', 'ц'),
    ('х', 'һ'),
    ('ш', 'ј'),
    ('з', 'ѕ'),
    ('д', 'ђ'),
    ('э', 'є'),
    ('и', 'і'),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconSizes {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub prepositions: usize,
}

impl Default for LexiconSizes {
    fn default() -> Self {
        LexiconSizes {
            nouns: 120,
            verbs: 50,
            adjectives: 40,
            adverbs: 20,
            prepositions: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Subject,
    Object,
    Locative,
}

/// Paired source/standard lexicon with a small sentence grammar.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGrammar {
    nouns: Vec<(String, String)>,
    verbs: Vec<(String, String)>,
    adjectives: Vec<(String, String)>,
    adverbs: Vec<(String, String)>,
    prepositions: Vec<(String, String)>,
    /// Source determiners; only the demonstrative has a standard counterpart.
    determiners: [String; 3],
    demonstrative: String,
    /// Standard past-tense particle, placed before the verb.
    past_particle: String,
    /// Selectional preferences, as indices into the word lists above.
    verb_subjects: Vec<Vec<usize>>,
    verb_objects: Vec<Vec<usize>>,
    verb_adverbs: Vec<Vec<usize>>,
    verb_prepositions: Vec<Vec<usize>>,
    noun_adjectives: Vec<Vec<usize>>,
    preposition_nouns: Vec<Vec<usize>>,
}

fn preferences(rng: &mut ChaCha8Rng, rows: usize, pool: usize, k: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..pool).collect();
    (0..rows).map(|_| all.choose_multiple(rng, k.min(pool)).copied().collect()).collect()
}

fn make_word(rng: &mut ChaCha8Rng, consonants: &[&str], vowels: &[&str], syllables: usize, coda: bool) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(consonants.choose(rng).unwrap());
        w.push_str(vowels.choose(rng).unwrap());
    }
    if coda {
        w.push_str(consonants.choose(rng).unwrap());
    }
    w
}

/// `n` distinct words not in `used`, recorded in `used`.
fn fresh_words(rng: &mut ChaCha8Rng, n: usize, consonants: &[&str], vowels: &[&str], used: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = rng.gen_range(1..=2);
        let coda = rng.gen_bool(0.6);
        let w = make_word(rng, consonants, vowels, syl, coda);
        if w.chars().count() >= 3 && used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl SyntheticGrammar {
    pub fn new(seed: u64, sizes: LexiconSizes) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src_used = HashSet::new();
        let mut std_used = HashSet::new();
        let mut pairs = |n: usize, rng: &mut ChaCha8Rng| -> Vec<(String, String)> {
            let s = fresh_words(rng, n, SRC_CONSONANTS, SRC_VOWELS, &mut src_used);
            let t = fresh_words(rng, n, STD_CONSONANTS, STD_VOWELS, &mut std_used);
            s.into_iter().zip(t).collect()
        };
        let nouns = pairs(sizes.nouns, &mut rng);
        let verbs = pairs(sizes.verbs, &mut rng);
        let adjectives = pairs(sizes.adjectives, &mut rng);
        let adverbs = pairs(sizes.adverbs, &mut rng);
        let prepositions = pairs(sizes.prepositions, &mut rng);
        let dets = pairs(4, &mut rng);
        let (nv, nn) = (verbs.len(), nouns.len());
        let verb_subjects = preferences(&mut rng, nv, nn, 10);
        let verb_objects = preferences(&mut rng, nv, nn, 10);
        let verb_adverbs = preferences(&mut rng, nv, adverbs.len(), 3);
        let verb_prepositions = preferences(&mut rng, nv, prepositions.len(), 2);
        let noun_adjectives = preferences(&mut rng, nn, adjectives.len(), 3);
        let preposition_nouns = preferences(&mut rng, prepositions.len(), nn, 15);
        SyntheticGrammar {
            verb_subjects,
            verb_objects,
            verb_adverbs,
            verb_prepositions,
            noun_adjectives,
            preposition_nouns,
            nouns,
            verbs,
            adjectives,
            adverbs,
            prepositions,
            determiners: [dets[0].0.clone(), dets[1].0.clone(), dets[2].0.clone()],
            demonstrative: dets[2].1.clone(),
            past_particle: dets[3].1.clone(),
        }
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng, noun: usize, case: Case, src: &mut Vec<String>, std: &mut Vec<String>) {
        let det = rng.gen_range(0..3);
        src.push(self.determiners[det].clone());
        if det == 2 {
            std.push(self.demonstrative.clone());
        }
        if rng.gen_bool(0.4) {
            let (s, t) = &self.adjectives[*self.noun_adjectives[noun].choose(rng).unwrap()];
            src.push(s.clone());
            let suffix = match case {
                Case::Subject => "ый",
                Case::Object => "ую",
                Case::Locative => "ом",
            };
            std.push(format!("{t}{suffix}"));
        }
        let (s, t) = &self.nouns[noun];
        src.push(s.clone());
        let suffix = match case {
            Case::Subject => "",
            Case::Object => "у",
            Case::Locative => "е",
        };
        std.push(format!("{t}{suffix}"));
    }

    /// One `(src, std)` sentence pair. Source: `NP V [NP] [PP] [ADV]`; standard: the same
    /// with articles dropped, case suffixes, a past-tense particle, and the adverb before
    /// the verb. The verb picks its arguments, adverb and preposition from small preferred
    /// sets.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (String, String) {
        let (mut src, mut std) = (Vec::new(), Vec::new());
        let verb = rng.gen_range(0..self.verbs.len());
        let subject = *self.verb_subjects[verb].choose(rng).unwrap();
        self.noun_phrase(rng, subject, Case::Subject, &mut src, &mut std);
        let adverb = rng
            .gen_bool(0.3)
            .then(|| self.adverbs[*self.verb_adverbs[verb].choose(rng).unwrap()].clone());
        if let Some((_, t)) = &adverb {
            std.push(format!("{t}о"));
        }
        let (vs, vt) = &self.verbs[verb];
        let past = rng.gen_bool(0.5);
        src.push(format!("{vs}{}", if past { "ed" } else { "s" }));
        if past {
            std.push(self.past_particle.clone());
        }
        std.push(format!("{vt}ет"));
        if rng.gen_bool(0.7) {
            let object = *self.verb_objects[verb].choose(rng).unwrap();
            self.noun_phrase(rng, object, Case::Object, &mut src, &mut std);
        }
        if rng.gen_bool(0.4) {
            let prep = *self.verb_prepositions[verb].choose(rng).unwrap();
            let (ps, pt) = &self.prepositions[prep];
            src.push(ps.clone());
            std.push(pt.clone());
            let noun = *self.preposition_nouns[prep].choose(rng).unwrap();
            self.noun_phrase(rng, noun, Case::Locative, &mut src, &mut std);
        }
        if let Some((s, _)) = adverb {
            src.push(s);
        }
        (src.join(" "), std.join(" "))
    }

    pub fn sample_many(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharRule {
    pub from: char,
    pub to: char,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalRule {
    pub from: String,
    pub to: String,
    pub probability: f64,
}

/// Word substitutions are applied first, then character substitutions to every word.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntheticVarietySpec {
    pub char_rules: Vec<CharRule>,
    pub lexical_rules: Vec<LexicalRule>,
}

/// Observed std word → variety word realizations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GoldMapping {
    pub words: BTreeMap<String, BTreeSet<String>>,
}

impl SyntheticVarietySpec {
    pub fn validate(&self) -> Result<()> {
        let bad_p = |p: f64| !(0.0..=1.0).contains(&p);
        if self.char_rules.iter().any(|r| bad_p(r.probability)) || self.lexical_rules.iter().any(|r| bad_p(r.probability)) {
            return Err(Error::invalid("substitution probabilities must lie in [0, 1]"));
        }
        let mut from = HashSet::new();
        if self.char_rules.iter().any(|r| !from.insert(r.from)) {
            return Err(Error::invalid("duplicate character rule"));
        }
        let mut from = HashSet::new();
        if self.lexical_rules.iter().any(|r| r.from.is_empty() || r.to.is_empty() || r.to.contains(char::is_whitespace) || !from.insert(r.from.as_str())) {
            return Err(Error::invalid("lexical rules need distinct non-empty single-word sources and targets"));
        }
        Ok(())
    }

    /// Five character rules and `lexical` word rules, all firing with probability 1, drawn
    /// from `std_corpus`. Character rules map letters onto ones absent from the standard
    /// alphabet; of the candidates, the five whose letters occur in the fewest running
    /// words are used. Word rules replace types seen at least five times with fresh words. The whole map
    /// stays invertible.
    pub fn default_for(std_corpus: &MonoCorpus, lexical: usize, seed: u64) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in std_corpus.words() {
            *counts.entry(w).or_insert(0) += 1;
        }
        let mut candidates: Vec<(usize, char, char)> = CHAR_RULE_CANDIDATES
            .iter()
            .map(|&(from, to)| {
                let hits = counts.iter().filter(|(w, _)| w.contains(from)).map(|(_, c)| c).sum();
                (hits, from, to)
            })
            .collect();
        candidates.sort();
        let char_rules: Vec<CharRule> = candidates
            .iter()
            .take(5)
            .map(|&(_, from, to)| CharRule { from, to, probability: 1.0 })
            .collect();
        let mut types: Vec<(&str, usize)> = counts.into_iter().collect();
        types.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let pool: Vec<&str> = types.iter().filter(|t| t.1 >= 5).map(|t| t.0).collect();
        if pool.len() < lexical {
            return Err(Error::invalid(format!("corpus has {} word types, {lexical} lexical rules requested", pool.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen: Vec<&str> = pool.choose_multiple(&mut rng, lexical).copied().collect();
        let mut spec = SyntheticVarietySpec {
            char_rules,
            lexical_rules: Vec::new(),
        };
        // variants must not collide with any realized word, before or after character rules
        let mut taken: HashSet<String> = types.iter().flat_map(|t| [t.0.to_string(), spec.map_chars(t.0)]).collect();
        for from in chosen {
            let to = loop {
                let w = make_word(&mut rng, STD_CONSONANTS, STD_VOWELS, 2, true);
                let mapped = spec.map_chars(&w);
                if !taken.contains(&w) && !taken.contains(&mapped) {
                    taken.insert(w.clone());
                    taken.insert(mapped);
                    break w;
                }
            };
            spec.lexical_rules.push(LexicalRule {
                from: from.to_string(),
                to,
                probability: 1.0,
            });
        }
        Ok(spec)
    }

    fn map_chars(&self, w: &str) -> String {
        w.chars()
            .map(|c| self.char_rules.iter().find(|r| r.from == c).map_or(c, |r| r.to))
            .collect()
    }

    fn apply_word(&self, w: &str, rng: &mut ChaCha8Rng) -> String {
        let mut word = w.to_string();
        if let Some(r) = self.lexical_rules.iter().find(|r| r.from == w) {
            if r.probability >= 1.0 || rng.gen_bool(r.probability) {
                word = r.to.clone();
            }
        }
        word.chars()
            .map(|c| match self.char_rules.iter().find(|r| r.from == c) {
                Some(r) if r.probability >= 1.0 || rng.gen_bool(r.probability) => r.to,
                _ => c,
            })
            .collect()
    }

    /// Undoes probability-1 rules: character rules backwards, then word rules.
    pub fn invert_sentence(&self, sentence: &str) -> String {
        sentence
            .split_whitespace()
            .map(|w| {
                let w: String = w
                    .chars()
                    .map(|c| self.char_rules.iter().find(|r| r.to == c).map_or(c, |r| r.from))
                    .collect();
                self.lexical_rules.iter().find(|r| r.to == w).map_or(w, |r| r.from.clone())
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Applies the variety rules to every sentence of `std_corpus`.
pub fn generate_synthetic_pair(spec: &SyntheticVarietySpec, std_corpus: &MonoCorpus, seed: u64) -> Result<(MonoCorpus, GoldMapping)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gold = GoldMapping::default();
    let mut out = Vec::with_capacity(std_corpus.len());
    for s in &std_corpus.sentences {
        let words: Vec<String> = s
            .split_whitespace()
            .map(|w| {
                let v = spec.apply_word(w, &mut rng);
                gold.words.entry(w.to_string()).or_default().insert(v.clone());
                v
            })
            .collect();
        out.push(words.join(" "));
    }
    Ok((MonoCorpus::new("tgt", out)?, gold))
}

/// Jaccard overlap of the word types of two corpora.
pub fn vocabulary_overlap(a: &MonoCorpus, b: &MonoCorpus) -> f64 {
    let ta: HashSet<&str> = a.words().collect();
    let tb: HashSet<&str> = b.words().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}
