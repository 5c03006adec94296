//! Ontology grounding of schema properties: preprocess the property name,
//! search an ontology service, drop candidates without descriptions, and
//! rank the rest by embedding similarity.

mod ols;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ols::{OlsClient, OntologyAllowList, OntologySearch};

use crate::embed::{cosine, EmbedError, Embedder};
use crate::schema::{flatten, PropertyPath, SchemaDoc};
use crate::text::split_identifier;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Class,
    Property,
    Individual,
    Ontology,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 4] = [
        ResourceKind::Class,
        ResourceKind::Property,
        ResourceKind::Individual,
        ResourceKind::Ontology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Class => "class",
            ResourceKind::Property => "property",
            ResourceKind::Individual => "individual",
            ResourceKind::Ontology => "ontology",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown resource kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingCandidate {
    pub iri: String,
    pub label: String,
    pub description: String,
    pub source_ontology: String,
    pub resource_kind: ResourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("ontology service unreachable: {0}")]
    OlsUnreachable(String),
    #[error("ontology service protocol error: {0}")]
    OlsProtocolError(String),
    #[error("empty search query")]
    EmptyQuery,
    #[error("allow-list: {0}")]
    AllowList(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl GroundingError {
    pub fn code(&self) -> &'static str {
        match self {
            GroundingError::OlsUnreachable(_) => "OlsUnreachable",
            GroundingError::OlsProtocolError(_) => "OlsProtocolError",
            GroundingError::EmptyQuery => "EmptyQuery",
            GroundingError::AllowList(_) => "AllowList",
            GroundingError::Embed(e) => e.code(),
        }
    }
}

/// Property name to search query: underscores, hyphens and camelCase
/// boundaries become single spaces, then everything is lowercased.
pub fn preprocess_term(property_name: &str) -> String {
    split_identifier(property_name).join(" ").to_lowercase()
}

/// Keeps candidates whose description has visible text.
pub fn validate(candidates: Vec<GroundingCandidate>) -> Vec<GroundingCandidate> {
    candidates
        .into_iter()
        .filter(|c| !c.description.trim().is_empty())
        .collect()
}

/// Scores candidates by cosine similarity between `query_text` and each
/// description, sorts by score (descending), then label, then IRI, and
/// keeps the first `k`. Negative cosines are reported as score 0 but still
/// order below the rest.
pub fn rank(
    query_text: &str,
    candidates: Vec<GroundingCandidate>,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<GroundingCandidate>, GroundingError> {
    let k = k.max(1);
    if candidates.is_empty() {
        return Ok(candidates);
    }
    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(query_text.to_string());
    texts.extend(candidates.iter().map(|c| c.description.clone()));
    let vectors = embedder.embed(&texts)?;
    let (query, rest) = vectors
        .split_first()
        .ok_or_else(|| EmbedError::ProtocolError("no embeddings returned".into()))?;

    let mut scored: Vec<(f64, GroundingCandidate)> = candidates
        .into_iter()
        .zip(rest)
        .map(|(c, v)| Ok((cosine(query, v)?, c)))
        .collect::<Result<_, EmbedError>>()?;
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.total_cmp(sa)
            .then_with(|| a.label.cmp(&b.label))
            .then_with(|| a.iri.cmp(&b.iri))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(s, mut c)| {
            c.score = Some(s.max(0.0));
            c
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GroundingConfig {
    pub k: usize,
    pub kinds: Vec<ResourceKind>,
    pub allow: Option<OntologyAllowList>,
    /// Append the property's own description to the embedding query.
    pub use_description: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            kinds: vec![ResourceKind::Class, ResourceKind::Property],
            allow: None,
            use_description: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum GroundingOutcome {
    Matched { candidates: Vec<GroundingCandidate> },
    NoMatch,
    Error { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingEntry {
    pub path: PropertyPath,
    pub query: String,
    #[serde(flatten)]
    pub outcome: GroundingOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub k: usize,
    pub entries: Vec<GroundingEntry>,
}

impl GroundingReport {
    pub fn get(&self, path: &PropertyPath) -> Option<&GroundingEntry> {
        self.entries.iter().find(|e| &e.path == path)
    }
}

fn ground_one(
    name: &str,
    description: Option<&str>,
    cfg: &GroundingConfig,
    search: &dyn OntologySearch,
    embedder: &dyn Embedder,
) -> Result<Vec<GroundingCandidate>, GroundingError> {
    let query = preprocess_term(name);
    let candidates = validate(search.search(&query, &cfg.kinds, cfg.allow.as_ref())?);
    let query_text = match description.filter(|d| cfg.use_description && !d.trim().is_empty()) {
        Some(d) => format!("{query}: {d}"),
        None => query,
    };
    rank(&query_text, candidates, embedder, cfg.k)
}

/// Grounds every flattened node of `doc`. Failures are recorded per entry;
/// entries come back in flatten order whatever order the work finishes in.
pub fn ground_schema(
    doc: &SchemaDoc,
    cfg: &GroundingConfig,
    search: &dyn OntologySearch,
    embedder: &dyn Embedder,
) -> GroundingReport {
    let entries = flatten(doc)
        .into_par_iter()
        .map(|entry| {
            let name = entry.path.leaf_name().unwrap_or_default().to_string();
            let query = preprocess_term(&name);
            let outcome = match ground_one(&name, entry.description.as_deref(), cfg, search, embedder) {
                Ok(c) if c.is_empty() => GroundingOutcome::NoMatch,
                Ok(candidates) => GroundingOutcome::Matched { candidates },
                Err(e) => {
                    tracing::warn!(path = %entry.path, error = %e, "grounding failed");
                    GroundingOutcome::Error {
                        code: e.code().to_string(),
                        message: e.to_string(),
                    }
                }
            };
            GroundingEntry {
                path: entry.path,
                query,
                outcome,
            }
        })
        .collect();
    GroundingReport { k: cfg.k, entries }
}
