//! Slow, direct reimplementations used to cross-check the library.

use std::collections::HashMap;

use codeattack::metrics::Alternative;

// ---------------------------------------------------------------------------
// BLEU

fn occurrences(tokens: &[&str], gram: &[&str]) -> usize {
    if tokens.len() < gram.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| &tokens[i..i + gram.len()] == gram)
        .count()
}

/// Sentence BLEU-4 by direct counting: for every candidate n-gram position,
/// clip against reference counts, share the clip among its repeats.
pub fn bleu4(candidate: &[&str], reference: &[&str]) -> f64 {
    let mut product = 1.0;
    for n in 1..=4 {
        if candidate.len() < n {
            return 0.0;
        }
        let positions = candidate.len() - n + 1;
        let mut distinct: Vec<&[&str]> = Vec::new();
        for i in 0..positions {
            let gram = &candidate[i..i + n];
            if !distinct.contains(&gram) {
                distinct.push(gram);
            }
        }
        let matches: usize = distinct
            .iter()
            .map(|g| occurrences(candidate, g).min(occurrences(reference, g)))
            .sum();
        if matches == 0 {
            return 0.0;
        }
        product *= matches as f64 / positions as f64;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(0.25)
}

// ---------------------------------------------------------------------------
// Edit distances

fn lev(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let (ha, ta) = (a[0], &a[1..]);
    let (hb, tb) = (b[0], &b[1..]);
    let d = if ha == hb {
        lev(ta, tb, memo)
    } else {
        1 + lev(ta, b, memo).min(lev(a, tb, memo)).min(lev(ta, tb, memo))
    };
    memo.insert((a.len(), b.len()), d);
    d
}

/// Character Levenshtein distance by memoised recursion on suffixes.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    lev(&a, &b, &mut HashMap::new())
}

/// Minimum over every token alignment of the summed character edits,
/// where an unaligned token costs its length.
pub fn token_alignment_cost(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        let len = |s: &str| s.chars().count();
        match (a.first(), b.first()) {
            (None, _) => b.iter().map(|s| len(s)).sum(),
            (_, None) => a.iter().map(|s| len(s)).sum(),
            (Some(x), Some(y)) => {
                if let Some(&d) = memo.get(&(a.len(), b.len())) {
                    return d;
                }
                let d = (levenshtein(x, y) + go(&a[1..], &b[1..], memo))
                    .min(len(x) + go(&a[1..], b, memo))
                    .min(len(y) + go(a, &b[1..], memo));
                memo.insert((a.len(), b.len()), d);
                d
            }
        }
    }
    go(a, b, &mut HashMap::new())
}

/// Exhaustive search over all edit scripts; the lexicographically smallest
/// `(cost, substitutions + insertions)`.
pub fn edit_script(from: &[&str], to: &[&str]) -> (usize, usize) {
    match (from.split_first(), to.split_first()) {
        (None, _) => (to.len(), to.len()),
        (_, None) => (from.len(), 0),
        (Some((x, fr)), Some((y, tr))) => {
            let (c, ch) = edit_script(fr, tr);
            let keep = if x == y { (c, ch) } else { (c + 1, ch + 1) };
            let (c, ch) = edit_script(fr, to);
            let delete = (c + 1, ch);
            let (c, ch) = edit_script(from, tr);
            let insert = (c + 1, ch + 1);
            keep.min(delete).min(insert)
        }
    }
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

/// Average 1-based rank of each pooled value, by counting.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    pooled
        .iter()
        .map(|&x| {
            let below = pooled.iter().filter(|&&y| y < x).count() as f64;
            let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// U statistic of `a` and its exact p-value by enumerating every way of
/// labelling `a.len()` of the pooled observations as sample `a`.
pub fn mann_whitney(a: &[f64], b: &[f64], alternative: Alternative) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let na = a.len();
    let n = pooled.len();
    assert!(n <= 24, "enumeration oracle is for small samples");
    let observed: f64 = ranks[..na].iter().sum();
    let u = observed - (na * (na + 1)) as f64 / 2.0;
    let (mut total, mut ge, mut le) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let sum: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        total += 1;
        // rank sums are multiples of 1/2, exact in f64
        if sum >= observed {
            ge += 1;
        }
        if sum <= observed {
            le += 1;
        }
    }
    let greater = ge as f64 / total as f64;
    let less = le as f64 / total as f64;
    let p = match alternative {
        Alternative::Greater => greater,
        Alternative::Less => less,
        Alternative::TwoSided => (2.0 * greater.min(less)).min(1.0),
    };
    (u, p)
}

// ---------------------------------------------------------------------------
// Cosine ranking

pub const JAVA_RESERVED: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const", "continue",
    "default", "do", "double", "else", "enum", "extends", "final", "finally", "float", "for", "goto", "if",
    "implements", "import", "instanceof", "int", "interface", "long", "native", "new", "package", "private",
    "protected", "public", "return", "short", "static", "strictfp", "super", "switch", "synchronized", "this",
    "throw", "throws", "transient", "try", "void", "volatile", "while", "true", "false", "null", "var",
    "yield", "record", "_",
];

/// A letter or underscore, then letters, digits, or underscores; not `_`.
pub fn is_generator_name(name: &str) -> bool {
    let bytes = name.as_bytes();
    !bytes.is_empty()
        && name != "_"
        && (bytes[0].is_ascii_alphabetic() || bytes[0] == b'_')
        && bytes.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'_')
}

/// Words of `code` that look like identifiers. Only valid for code without
/// string literals or comments.
pub fn words(code: &str) -> Vec<&str> {
    code.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '$'))
        .filter(|w| !w.is_empty() && !w.starts_with(|c: char| c.is_ascii_digit()))
        .filter(|w| !JAVA_RESERVED.contains(w))
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Names ranked by cosine similarity to `identifier`'s vector (descending,
/// ties by name), minus the identifier itself, reserved words, and names
/// already in `code` or outside the generator rule; first `k`.
pub fn cosine_ranking(entries: &[(String, Vec<f64>)], code: &str, identifier: &str, k: usize) -> Vec<String> {
    let query = &entries.iter().find(|(n, _)| n == identifier).expect("identifier in table").1;
    let taken = words(code);
    let mut scored: Vec<(f64, &str)> = entries
        .iter()
        .filter(|(n, _)| n != identifier && is_generator_name(n) && !JAVA_RESERVED.contains(&n.as_str()) && !taken.contains(&n.as_str()))
        .map(|(n, v)| (cos(query, v), n.as_str()))
        .collect();
    // insertion sort
    for i in 1..scored.len() {
        let mut j = i;
        while j > 0 && {
            let (a, b) = (scored[j - 1], scored[j]);
            a.0 < b.0 || (a.0 == b.0 && a.1 > b.1)
        } {
            scored.swap(j - 1, j);
            j -= 1;
        }
    }
    scored.into_iter().take(k).map(|(_, n)| n.to_owned()).collect()
}
