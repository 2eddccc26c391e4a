use crate::error::{Error, Result};
use crate::textproc::SubwordToken;

pub const BOW: char = '<';
pub const EOW: char = '>';

/// Character n-grams of a subword token. The continuation marker is stripped first, the stem
/// is wrapped in `<` and `>`, and every substring of the wrapped string with a length in
/// `min_n..=max_n` scalar values is returned in order of start position, then length.
pub fn extract_ngrams(token: &SubwordToken, min_n: usize, max_n: usize) -> Result<Vec<String>> {
    char_ngrams(token.stem(), min_n, max_n)
}

/// Same as [`extract_ngrams`] for a stem that is already marker-free.
pub fn char_ngrams(stem: &str, min_n: usize, max_n: usize) -> Result<Vec<String>> {
    if min_n == 0 || min_n > max_n {
        return Err(Error::invalid(format!("bad n-gram range {min_n}..={max_n}")));
    }
    if stem.is_empty() {
        return Err(Error::Empty("token has no characters once the marker is removed"));
    }
    let wrapped: Vec<char> = std::iter::once(BOW)
        .chain(stem.chars())
        .chain(std::iter::once(EOW))
        .collect();
    let mut out = Vec::new();
    for start in 0..wrapped.len() {
        for n in min_n..=max_n {
            if start + n > wrapped.len() {
                break;
            }
            out.push(wrapped[start..start + n].iter().collect());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(v: Vec<String>) -> BTreeSet<String> {
        v.into_iter().collect()
    }

    #[test]
    fn all_substrings_of_wrapped_word() {
        let got = extract_ngrams(&SubwordToken::parse("cat", "@@"), 3, 6).unwrap();
        // Brute-force: every substring of "<cat>" with 3..=6 chars.
        let w: Vec<char> = "<cat>".chars().collect();
        let mut expected = BTreeSet::new();
        for i in 0..w.len() {
            for j in i + 3..=w.len().min(i + 6) {
                expected.insert(w[i..j].iter().collect::<String>());
            }
        }
        assert_eq!(got.len(), 6);
        assert_eq!(set(got), expected);
        assert!(expected.contains("<cat>"));
    }

    #[test]
    fn marker_contributes_no_ngrams() {
        let marked = extract_ngrams(&SubwordToken::parse("при@@", "@@"), 3, 6).unwrap();
        let plain = extract_ngrams(&SubwordToken::parse("при", "@@"), 3, 6).unwrap();
        assert_eq!(marked, plain);
        assert!(marked.iter().all(|g| !g.contains('@')));
        assert!(marked.contains(&"<при>".to_string()));
    }

    #[test]
    fn single_character_yields_only_the_wrapped_word() {
        assert_eq!(char_ngrams("a", 3, 6).unwrap(), vec!["<a>".to_string()]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(char_ngrams("", 3, 6).is_err());
        assert!(char_ngrams("abc", 0, 6).is_err());
        assert!(char_ngrams("abc", 4, 3).is_err());
    }

    #[test]
    fn counts_scalar_values_not_bytes() {
        // "<ёж>" has 4 scalar values.
        assert_eq!(char_ngrams("ёж", 4, 4).unwrap(), vec!["<ёж>".to_string()]);
    }
}
