//! String distance and overlap primitives. All lengths are in Unicode
//! scalar values.

use std::collections::BTreeSet;

/// Levenshtein distance between two char slices, two-row dynamic programme
/// after stripping the common prefix and suffix.
pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    // keep the row over the shorter string
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }

    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(lc != sc);
            row[j + 1] = (above + 1).min(row[j] + 1).min(diag + cost);
            diag = above;
        }
    }
    row[short.len()]
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

/// Normalized Levenshtein distance: edit distance over the longer length.
/// Two empty strings are at distance 0.
pub fn nld(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    levenshtein_chars(&a, &b) as f64 / longest as f64
}

/// Longest common contiguous run of two strings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonSubstring {
    pub length: usize,
    /// `length / max(len a, len b)`, 0 when both are empty.
    pub normalized: f64,
}

pub fn longest_common_substring(a: &str, b: &str) -> CommonSubstring {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    let mut best = 0;
    let mut row = vec![0usize; b.len() + 1];
    for ac in &a {
        let mut diag = 0;
        for (j, bc) in b.iter().enumerate() {
            let prev = row[j + 1];
            row[j + 1] = if ac == bc { diag + 1 } else { 0 };
            best = best.max(row[j + 1]);
            diag = prev;
        }
    }
    CommonSubstring {
        length: best,
        normalized: if longest == 0 {
            0.0
        } else {
            best as f64 / longest as f64
        },
    }
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokens(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            out.insert(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.insert(current);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenOverlap {
    pub common_count: usize,
    pub jaccard: f64,
}

pub fn token_overlap(a: &str, b: &str) -> TokenOverlap {
    let ta = tokens(a);
    let tb = tokens(b);
    let common = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - common;
    TokenOverlap {
        common_count: common,
        jaccard: if union == 0 {
            0.0
        } else {
            common as f64 / union as f64
        },
    }
}
