//! Corpus BLEU with the `13a` tokenization of the WMT `mteval-v13a` script.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Log used for zero precisions, as in the common reference implementation.
const LOG_ZERO: f64 = -9_999_999_999.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method", content = "value")]
pub enum Smoothing {
    /// A zero n-gram precision makes the score zero.
    #[default]
    None,
    /// Zero precisions become `1 / (2^k · total)` for the k-th such order.
    Exp,
    /// Zero precisions become `value / total`.
    Floor(f64),
    /// `value` is added to matches and totals of orders above one.
    AddK(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub smoothing: Smoothing,
    pub lowercase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0–100.
    pub score: f64,
    /// Modified n-gram precisions in percent, orders 1–4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn rules() -> &'static [(Regex, &'static str); 4] {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(), " ${1} "),
            (Regex::new(r"([^0-9])([\.,])").unwrap(), "${1} ${2} "),
            (Regex::new(r"([\.,])([^0-9])").unwrap(), " ${1} ${2}"),
            (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
        ]
    })
}

/// `13a` tokenization: unescapes a few HTML entities and splits most punctuation, keeping
/// periods and commas inside numbers.
pub fn tokenize_13a(line: &str) -> String {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in rules() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Score from sufficient statistics.
pub fn compute_bleu(
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
    smoothing: Smoothing,
) -> BleuScore {
    let brevity_penalty = match (hyp_len < ref_len, hyp_len) {
        (false, _) => 1.0,
        (true, 0) => 0.0,
        (true, h) => (1.0 - ref_len as f64 / h as f64).exp(),
    };
    let mut precisions = [0.0; MAX_ORDER];
    let mut out = BleuScore {
        score: 0.0,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matches,
        totals,
    };
    if matches.iter().all(|&m| m == 0) {
        return out;
    }
    let mut exp_factor = 1.0;
    for n in 0..MAX_ORDER {
        let (mut m, mut t) = (matches[n] as f64, totals[n] as f64);
        if let Smoothing::AddK(k) = smoothing {
            if n > 0 {
                m += k;
                t += k;
            }
        }
        if t == 0.0 {
            break;
        }
        precisions[n] = if m == 0.0 {
            match smoothing {
                Smoothing::Exp => {
                    exp_factor *= 2.0;
                    100.0 / (exp_factor * t)
                }
                Smoothing::Floor(v) => 100.0 * v / t,
                _ => 0.0,
            }
        } else {
            100.0 * m / t
        };
    }
    // logs of fractions rather than percentages, so that perfect precision gives exactly 100
    let log_sum: f64 = precisions
        .iter()
        .map(|&p| if p == 0.0 { LOG_ZERO } else { (p / 100.0).ln() })
        .sum();
    out.precisions = precisions;
    out.score = 100.0 * brevity_penalty * (log_sum / MAX_ORDER as f64).exp();
    out
}

/// Corpus BLEU of `hypotheses` against one reference each, without smoothing.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[T]) -> Result<BleuScore> {
    bleu_with(hypotheses, references, &BleuConfig::default())
}

pub fn bleu_with<S: AsRef<str>, T: AsRef<str>>(hypotheses: &[S], references: &[T], config: &BleuConfig) -> Result<BleuScore> {
    if references.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            found: hypotheses.len(),
        });
    }
    let prep = |s: &str| {
        let s = s.trim_end();
        match config.lowercase {
            true => tokenize_13a(&s.to_lowercase()),
            false => tokenize_13a(s),
        }
    };
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (prep(h.as_ref()), prep(r.as_ref()));
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let rc = ngram_counts(&rt, n);
            for (g, c) in ngram_counts(&ht, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += ht.len().saturating_sub(n - 1);
        }
    }
    Ok(compute_bleu(matches, totals, hyp_len, ref_len, config.smoothing))
}
