use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bleu, emb_f1_with, embed_tokens, rouge_l, schema_tokens, EmbF1, FieldMode, TokenSeq, BLEU_MAX_N};
use crate::embed::{EmbedError, Embedder};
use crate::schema::SchemaDoc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub rouge_l: f64,
    pub bleu: f64,
    /// Absent when no embedder was configured.
    pub emb_f1: Option<f64>,
}

/// Ordered-pair comparison of one schema per model. `cells[candidate][reference]`;
/// the diagonal is never present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub stage: String,
    pub fields: FieldMode,
    pub models: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, PairCell>>,
}

impl PairwiseReport {
    pub fn cell(&self, candidate: &str, reference: &str) -> Option<&PairCell> {
        self.cells.get(candidate)?.get(reference)
    }

    /// Candidate rows, one column triplet per reference model.
    pub fn render_table(&self) -> String {
        const W: usize = 8;
        let name_w = self.models.iter().map(String::len).max().unwrap_or(0).max("candidate".len());
        let group_w = 3 * W + 2;
        let mut out = String::new();
        let _ = writeln!(out, "Stage: {} (fields: {})", self.stage, self.fields);

        let _ = write!(out, "{:name_w$}", "");
        for m in &self.models {
            let _ = write!(out, " | {:group_w$}", m);
        }
        out.push('\n');
        let _ = write!(out, "{:name_w$}", "candidate");
        for _ in &self.models {
            let _ = write!(out, " | {:W$} {:W$} {:W$}", "RougeL", "Bleu", "Emb-F1");
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(name_w + self.models.len() * (group_w + 3)));

        let num = |v: f64| format!("{v:.4}");
        for cand in &self.models {
            let _ = write!(out, "{cand:name_w$}");
            for reference in &self.models {
                let (r, b, e) = match self.cell(cand, reference) {
                    None => ("-".to_string(), "-".to_string(), "-".to_string()),
                    Some(c) => (num(c.rouge_l), num(c.bleu), c.emb_f1.map_or("n/a".to_string(), num)),
                };
                let _ = write!(out, " | {r:W$} {b:W$} {e:W$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scores every ordered pair of distinct models. BLEU runs candidate to
/// reference; ROUGE-L and the embedding F1 are symmetric.
pub fn build_pairwise_report(
    snapshots: &[(String, SchemaDoc)],
    stage: &str,
    fields: FieldMode,
    embedder: Option<&dyn Embedder>,
) -> Result<PairwiseReport, EmbedError> {
    let tokens: Vec<(String, TokenSeq)> = snapshots
        .iter()
        .map(|(m, doc)| (m.clone(), schema_tokens(doc, fields)))
        .collect();
    let table = match embedder {
        Some(e) => Some(embed_tokens(tokens.iter().map(|(_, t)| t), e)?),
        None => None,
    };

    let pairs: Vec<(usize, usize)> = (0..tokens.len())
        .flat_map(|i| (0..tokens.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let scored: Vec<(usize, usize, PairCell)> = pairs
        .into_par_iter()
        .map(|(i, j)| {
            let (c, r) = (&tokens[i].1, &tokens[j].1);
            let emb = match &table {
                Some(t) => Some(emb_f1_with(c, r, t)?),
                None => None,
            };
            Ok((
                i,
                j,
                PairCell {
                    rouge_l: rouge_l(c, r),
                    bleu: bleu(c, r, BLEU_MAX_N),
                    emb_f1: emb.map(|e: EmbF1| e.f1),
                },
            ))
        })
        .collect::<Result<_, EmbedError>>()?;

    let mut cells: BTreeMap<String, BTreeMap<String, PairCell>> = BTreeMap::new();
    for (i, j, cell) in scored {
        cells.entry(tokens[i].0.clone()).or_default().insert(tokens[j].0.clone(), cell);
    }
    Ok(PairwiseReport {
        stage: stage.to_string(),
        fields,
        models: tokens.into_iter().map(|(m, _)| m).collect(),
        cells,
    })
}
