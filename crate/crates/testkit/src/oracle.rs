//! Slow, obviously-correct reference implementations of the text metrics.

use std::collections::BTreeMap;

/// Every sequence over `alphabet` of length 0..=max_len, shortest first.
pub fn all_sequences(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut layer: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &layer {
            for sym in alphabet {
                let mut s = seq.clone();
                s.push(sym.to_string());
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// Longest common subsequence by trying every subset of the shorter input.
pub fn lcs_exhaustive(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "exhaustive LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let picked: Vec<&String> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        if is_subsequence(&picked, long) {
            best = size;
        }
    }
    best
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_exhaustive(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn count_table(tokens: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
    let mut table = BTreeMap::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        *table.entry(tokens[i..i + n].to_vec()).or_insert(0) += 1;
        i += 1;
    }
    table
}

/// n-gram count tables for n = 1..=4, built once per sequence.
#[derive(Debug, Clone)]
pub struct NgramTables {
    len: usize,
    tables: Vec<BTreeMap<Vec<String>, usize>>,
}

impl NgramTables {
    pub fn new(tokens: &[String]) -> Self {
        Self {
            len: tokens.len(),
            tables: (1..=4).map(|n| count_table(tokens, n)).collect(),
        }
    }
}

/// BLEU-4 with (0+1)/(total+1) for empty higher orders, written out with
/// explicit count tables and a product instead of a log mean.
pub fn bleu4_tables(cand: &NgramTables, reference: &NgramTables) -> f64 {
    if cand.len == 0 {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let c = &cand.tables[n - 1];
        let r = &reference.tables[n - 1];
        let mut matched = 0;
        let mut total = 0;
        for (gram, count) in c {
            total += count;
            let in_ref = r.get(gram).copied().unwrap_or(0);
            matched += if *count < in_ref { *count } else { in_ref };
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        product *= p;
    }
    let bp = if cand.len >= reference.len {
        1.0
    } else {
        (1.0 - reference.len as f64 / cand.len as f64).exp()
    };
    bp * product.powf(0.25)
}

pub fn bleu4(cand: &[String], reference: &[String]) -> f64 {
    bleu4_tables(&NgramTables::new(cand), &NgramTables::new(reference))
}

/// Embedding F1 under an embedder that maps distinct tokens to orthogonal
/// vectors: a token scores 1 if it occurs on the other side, else 0.
pub fn orthogonal_emb_f1(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let p = cand.iter().filter(|t| reference.contains(t)).count() as f64 / cand.len() as f64;
    let r = reference.iter().filter(|t| cand.contains(t)).count() as f64 / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
