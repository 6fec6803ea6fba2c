//! Independent reference implementations shared by several test targets.
#![allow(dead_code)]

use tracecard::TokenUsage;

/// Four-term evaluation in f64 dollars, independent of the Usd arithmetic.
/// Rates are dollars per million tokens.
pub fn oracle_cost(t: &TokenUsage, r: (f64, f64, f64, f64)) -> f64 {
    (t.input as f64 * r.0 + t.output as f64 * r.1 + t.cache_read as f64 * r.2 + t.cache_write as f64 * r.3) / 1e6
}

/// Full-matrix edit distance.
pub fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Plain recursion; only for short inputs.
pub fn recursive_distance(a: &[char], b: &[char]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = recursive_distance(ra, rb) + usize::from(x != y);
            sub.min(recursive_distance(ra, b) + 1).min(recursive_distance(a, rb) + 1)
        }
    }
}

/// Word tokens by walking characters, collected into a deduplicated list.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if cur.chars().count() >= 2 {
                let lower = cur.to_lowercase();
                if !out.contains(&lower) {
                    out.push(lower);
                }
            }
            cur.clear();
        }
    }
    out
}

pub fn enumerated_jaccard(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let mut union = ta.clone();
    for t in &tb {
        if !union.contains(t) {
            union.push(t.clone());
        }
    }
    if union.is_empty() {
        return 1.0;
    }
    let both = union.iter().filter(|t| ta.contains(t) && tb.contains(t)).count();
    both as f64 / union.len() as f64
}
