//! Approximate matching of diagnosis guesses against the hidden condition.
//!
//! Distances are indel distances (insertions and deletions only, a
//! substitution costs two), and ratios live on `[0, 1]`. The token-set ratio
//! reproduces the behaviour of the common "fuzz" family of libraries, which
//! report the same quantity on a 0-100 scale.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Default acceptance threshold for a diagnosis guess.
pub const DEFAULT_CUTOFF: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub ratio: f64,
    pub matched: bool,
    pub cutoff: f64,
}

/// Minimum number of single-character insertions and deletions turning `a`
/// into `b`. Counts Unicode scalar values, not bytes.
pub fn indel_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    a.len() + b.len() - 2 * lcs_len(&a, &b)
}

fn lcs_len(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for &lc in long {
        let mut diag = 0;
        for (j, &sc) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if lc == sc { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// Normalized indel similarity, `1 - d / (|a| + |b|)`. Two empty strings are
/// identical and score 1.0.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    // (total - d) / total == 2·lcs / total, computed as one correctly rounded division.
    (2 * lcs_len(&a, &b)) as f64 / total as f64
}

/// Case-folded alphanumeric tokens of `s`. Every other character separates.
pub fn tokenize(s: &str) -> BTreeSet<String> {
    let folded: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().map(str::to_owned).collect()
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word-order-insensitive similarity over the token sets of both inputs.
///
/// With `I` the sorted intersection and `X`, `Y` the intersection followed by
/// each side's remaining tokens, returns the best of `sim(I, X)`,
/// `sim(I, Y)` and `sim(X, Y)`. An empty token set on either side scores 0.
pub fn token_set_ratio(a: &str, b: &str) -> f64 {
    let ta = tokenize(a);
    let tb = tokenize(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }

    let join = |set: Vec<&String>| set.into_iter().map(String::as_str).collect::<Vec<_>>().join(" ");
    let common = join(ta.intersection(&tb).collect());
    let only_a = join(ta.difference(&tb).collect());
    let only_b = join(tb.difference(&ta).collect());

    let x = join_nonempty(&[&common, &only_a]);
    let y = join_nonempty(&[&common, &only_b]);

    similarity(&common, &x)
        .max(similarity(&common, &y))
        .max(similarity(&x, &y))
}

/// Adjudicates `guess` against `truth`. The cutoff is inclusive.
pub fn is_match(guess: &str, truth: &str, cutoff: f64) -> MatchOutcome {
    debug_assert!((0.0..=1.0).contains(&cutoff), "cutoff out of range: {cutoff}");
    let ratio = token_set_ratio(guess, truth);
    MatchOutcome {
        ratio,
        matched: ratio >= cutoff,
        cutoff,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indel_examples() {
        assert_eq!(indel_distance("", "abc"), 3);
        assert_eq!(indel_distance("psoriasis", "psoriasis"), 0);
        assert_eq!(indel_distance("kitten", "sitting"), 5);
        assert_eq!(indel_distance("ab", "ba"), 2);
    }

    #[test]
    fn indel_counts_chars_not_bytes() {
        assert_eq!(indel_distance("é", "e"), 2);
        assert_eq!(indel_distance("ééé", ""), 3);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("urticaria", "urticaria"), 1.0);
        assert_eq!(similarity("kitten", "sitting"), 8.0 / 13.0);
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("", "a"), 0.0);
    }

    #[test]
    fn tokenizer_folds_case_and_splits_punctuation() {
        let t = tokenize("Eczema/Atopic-DERMATITIS  (chronic)");
        let v: Vec<_> = t.iter().map(String::as_str).collect();
        assert_eq!(v, vec!["atopic", "chronic", "dermatitis", "eczema"]);
        assert!(tokenize(" -- ").is_empty());
        assert_eq!(tokenize("Ärztliche ÜBERWEISUNG").len(), 2);
        assert!(tokenize("Ärztliche").contains("ärztliche"));
    }

    // Expected values below were computed with a separate brute-force script
    // (full insert/delete table, explicit set algebra).
    #[test]
    fn token_set_ratio_examples() {
        assert_eq!(token_set_ratio("bullous disease", "Disease  Bullous"), 1.0);
        assert_eq!(token_set_ratio("dermatitis", "atopic dermatitis"), 1.0);
        assert_eq!(token_set_ratio("psoriasis", "bullous disease"), 1.0 / 3.0);
        assert_eq!(token_set_ratio("eczema", "Bullous Disease"), 4.0 / 21.0);
        assert_eq!(token_set_ratio("plaque psoriasis", "psoriasis vulgaris"), 0.72);
        assert_eq!(token_set_ratio("atopic eczema", "eczema herpeticum"), 2.0 / 3.0);
    }

    #[test]
    fn empty_token_sets_score_zero() {
        assert_eq!(token_set_ratio("", "psoriasis"), 0.0);
        assert_eq!(token_set_ratio("!!!", "psoriasis"), 0.0);
        assert_eq!(token_set_ratio("", ""), 0.0);
    }

    #[test]
    fn cutoff_is_inclusive() {
        let out = is_match("abcdefghij", "abcdefgxyz", DEFAULT_CUTOFF);
        assert_eq!(out.ratio, 0.7);
        assert!(out.matched);
        let out = is_match("abcdefghij", "abcdefgxyz", 0.700_000_000_1);
        assert!(!out.matched);
    }

    #[test]
    fn match_examples() {
        let hit = is_match("bullous disease", "Bullous Disease", DEFAULT_CUTOFF);
        assert!(hit.matched);
        assert_eq!(hit.ratio, 1.0);
        assert_eq!(hit.cutoff, 0.7);
        assert!(!is_match("eczema", "Bullous Disease", DEFAULT_CUTOFF).matched);
        assert!(!is_match("psoriasis", "Bullous Disease", DEFAULT_CUTOFF).matched);
    }
}
