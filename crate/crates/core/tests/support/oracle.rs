//! Brute-force reference for token-set matching: a full edit table with
//! substitution disallowed and plain sorted-vector set operations.

#![allow(dead_code)]

use rand::Rng;

pub fn indel_table(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let mut best = (d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            if a[i - 1] == b[j - 1] {
                best = best.min(d[i - 1][j - 1]);
            }
            d[i][j] = best;
        }
    }
    d[a.len()][b.len()]
}

pub fn ratio(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    if total == 0 {
        return 1.0;
    }
    (total - indel_table(a, b)) as f64 / total as f64
}

pub fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        for l in c.to_lowercase() {
            if l.is_alphanumeric() {
                cur.push(l);
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.sort();
    out.dedup();
    out
}

fn glue(parts: &[String]) -> String {
    parts.iter().filter(|p| !p.is_empty()).cloned().collect::<Vec<_>>().join(" ")
}

pub fn token_set(a: &str, b: &str) -> f64 {
    let (wa, wb) = (words(a), words(b));
    if wa.is_empty() || wb.is_empty() {
        return 0.0;
    }
    let both: Vec<String> = wa.iter().filter(|w| wb.contains(w)).cloned().collect();
    let only_a: Vec<String> = wa.iter().filter(|w| !wb.contains(w)).cloned().collect();
    let only_b: Vec<String> = wb.iter().filter(|w| !wa.contains(w)).cloned().collect();
    let i = both.join(" ");
    let x = glue(&[i.clone(), only_a.join(" ")]);
    let y = glue(&[i.clone(), only_b.join(" ")]);
    [ratio(&i, &x), ratio(&i, &y), ratio(&x, &y)].into_iter().fold(0.0, f64::max)
}

const VOCAB: &[&str] = &[
    "psoriasis", "bullous", "disease", "atopic", "dermatitis", "eczema", "acne", "vulgaris", "plaque", "guttate",
    "lichen", "planus", "tinea", "corporis", "rosacea", "melanoma", "nevus", "urticaria", "pemphigus", "pemphigoid",
];

/// A random diagnosis-like string: vocabulary words, random letter runs,
/// mixed case and assorted separators.
pub fn random_phrase<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.random_range(0..=4);
    let mut out = String::new();
    for k in 0..n {
        if k > 0 || rng.random_bool(0.1) {
            out.push_str([" ", "  ", "-", ", ", "/", " & "][rng.random_range(0..6)]);
        }
        let word: String = if rng.random_bool(0.6) {
            VOCAB[rng.random_range(0..VOCAB.len())].to_string()
        } else {
            (0..rng.random_range(1..=8)).map(|_| rng.random_range(b'a'..=b'f') as char).collect()
        };
        let word = if rng.random_bool(0.2) { word.to_uppercase() } else { word };
        out.push_str(&word);
    }
    out
}
