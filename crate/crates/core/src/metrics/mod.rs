//! Token-level similarity between schemas: ROUGE-L (F1), BLEU-4 and a
//! greedy embedding F1, plus pairwise model-by-model reports.

mod report;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{build_pairwise_report, PairCell, PairwiseReport};

use crate::embed::{cosine, EmbedError, Embedder};
use crate::schema::{flatten, serialize_canonical, SchemaDoc};
use crate::text::split_identifier;

/// Ordered, lowercased tokens; never contains an empty token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tokens.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '{' | '}' | '[' | ']' | '"' | ',' | ':')
}

pub fn tokenize_schema(text: &str) -> TokenSeq {
    TokenSeq::new(
        text.split(is_separator)
            .filter(|piece| !piece.is_empty())
            .flat_map(split_identifier)
            .map(|w| w.to_lowercase()),
    )
}

/// Which part of a schema gets scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    /// The whole canonical serialization.
    #[default]
    Full,
    /// Only description strings, in document order.
    Descriptions,
}

impl FieldMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldMode::Full => "full",
            FieldMode::Descriptions => "descriptions",
        }
    }
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(FieldMode::Full),
            "descriptions" => Ok(FieldMode::Descriptions),
            other => Err(format!("unknown field mode `{other}` (expected full or descriptions)")),
        }
    }
}

pub fn schema_tokens(doc: &SchemaDoc, mode: FieldMode) -> TokenSeq {
    match mode {
        FieldMode::Full => tokenize_schema(&serialize_canonical(doc)),
        FieldMode::Descriptions => {
            let mut text: Vec<String> = doc.description.iter().cloned().collect();
            text.extend(flatten(doc).into_iter().filter_map(|e| e.description));
            tokenize_schema(&text.join("\n"))
        }
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L as the F1 of LCS precision and recall.
pub fn rouge_l(cand: &TokenSeq, reference: &TokenSeq) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(cand.tokens(), reference.tokens());
    if l == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = l/|c|, R = l/|r|
    2.0 * l as f64 / (cand.len() + reference.len()) as f64
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub const BLEU_MAX_N: usize = 4;

/// Sentence BLEU of `cand` against a single reference. Orders n >= 2 with
/// no clipped matches use (0 + 1) / (total + 1).
pub fn bleu(cand: &TokenSeq, reference: &TokenSeq, max_n: usize) -> f64 {
    let (c, r) = (cand.tokens(), reference.tokens());
    if c.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_counts = ngram_counts(c, n);
        let ref_counts = ngram_counts(r, n);
        let total = c.len().saturating_sub(n - 1);
        let matched: usize = cand_counts
            .iter()
            .map(|(g, &k)| k.min(ref_counts.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else if matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let bp = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EmbF1 {
    const ZERO: EmbF1 = EmbF1 {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Token vectors keyed by token text.
pub(crate) type VectorTable = HashMap<String, Vec<f64>>;

pub(crate) fn embed_tokens<'a>(
    seqs: impl IntoIterator<Item = &'a TokenSeq>,
    embedder: &dyn Embedder,
) -> Result<VectorTable, EmbedError> {
    let mut seen = HashSet::new();
    let unique: Vec<String> = seqs
        .into_iter()
        .flat_map(|s| s.tokens())
        .filter(|t| seen.insert(t.as_str()))
        .cloned()
        .collect();
    if unique.is_empty() {
        return Ok(VectorTable::new());
    }
    let vectors = embedder.embed(&unique)?;
    Ok(unique.into_iter().zip(vectors).collect())
}

fn greedy_mean(from: &[String], to: &[String], table: &VectorTable) -> Result<f64, EmbedError> {
    let mut sum = 0.0;
    for a in from {
        let mut best = f64::NEG_INFINITY;
        for b in to {
            // a token always matches itself exactly
            let s = if a == b { 1.0 } else { cosine(&table[a], &table[b])? };
            best = best.max(s);
        }
        sum += best;
    }
    Ok(sum / from.len() as f64)
}

pub(crate) fn emb_f1_with(cand: &TokenSeq, reference: &TokenSeq, table: &VectorTable) -> Result<EmbF1, EmbedError> {
    if cand.is_empty() || reference.is_empty() {
        return Ok(EmbF1::ZERO);
    }
    let precision = greedy_mean(cand.tokens(), reference.tokens(), table)?.max(0.0);
    let recall = greedy_mean(reference.tokens(), cand.tokens(), table)?.max(0.0);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (precision * recall) / (precision + recall)
    };
    Ok(EmbF1 { precision, recall, f1 })
}

/// Greedy max-cosine matching over per-token embeddings.
pub fn emb_f1(cand: &TokenSeq, reference: &TokenSeq, embedder: &dyn Embedder) -> Result<EmbF1, EmbedError> {
    if cand.is_empty() || reference.is_empty() {
        return Ok(EmbF1::ZERO);
    }
    let table = embed_tokens([cand, reference], embedder)?;
    emb_f1_with(cand, reference, &table)
}
