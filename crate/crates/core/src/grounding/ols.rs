use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::{StatusCode, Url};
use serde_json::Value;

use super::{GroundingCandidate, GroundingError, ResourceKind};
use crate::gateway::RetryPolicy;

/// Ontology ids eligible for grounding. Matching is case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OntologyAllowList {
    ids: BTreeSet<String>,
}

impl OntologyAllowList {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            ids: ids
                .into_iter()
                .map(|s| s.as_ref().trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// One id per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().map(|l| l.split('#').next().unwrap_or("")))
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        let text = fs::read_to_string(path).map_err(|e| GroundingError::AllowList(format!("{}: {e}", path.display())))?;
        let list = Self::parse(&text);
        if list.is_empty() {
            return Err(GroundingError::AllowList(format!("{} lists no ontologies", path.display())));
        }
        Ok(list)
    }

    pub fn contains(&self, ontology: &str) -> bool {
        self.ids.contains(&ontology.to_lowercase())
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

/// Term search over an ontology service.
pub trait OntologySearch: Send + Sync {
    fn search(
        &self,
        query: &str,
        kinds: &[ResourceKind],
        allow: Option<&OntologyAllowList>,
    ) -> Result<Vec<GroundingCandidate>, GroundingError>;
}

/// Client for an OLS-style `GET {base}/search` API.
#[derive(Debug, Clone)]
pub struct OlsClient {
    base_url: String,
    rows: usize,
    retry: RetryPolicy,
    http: Client,
}

impl OlsClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self, GroundingError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| GroundingError::OlsProtocolError(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            rows: 25,
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rows(mut self, rows: usize) -> Self {
        self.rows = rows.max(1);
        self
    }

    fn search_url(&self, query: &str, kind: ResourceKind, allow: Option<&OntologyAllowList>) -> Result<Url, GroundingError> {
        let mut params = vec![
            ("q", query.to_string()),
            ("type", kind.as_str().to_string()),
            ("rows", self.rows.to_string()),
        ];
        if let Some(allow) = allow.filter(|a| !a.is_empty()) {
            params.push(("ontology", allow.ids().collect::<Vec<_>>().join(",")));
        }
        let base = format!("{}/search", self.base_url.trim_end_matches('/'));
        Url::parse_with_params(&base, &params).map_err(|e| GroundingError::OlsProtocolError(format!("bad OLS URL: {e}")))
    }

    fn fetch(&self, url: &Url) -> Result<Value, GroundingError> {
        let tries = self.retry.max_tries.max(1);
        let mut last = String::new();
        for attempt in 1..=tries {
            if attempt > 1 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            let resp = match self.http.get(url.clone()).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                last = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                return Err(GroundingError::OlsProtocolError(format!("HTTP {status}")));
            }
            return resp.json().map_err(|e| GroundingError::OlsProtocolError(e.to_string()));
        }
        Err(GroundingError::OlsUnreachable(last))
    }
}

fn text_field(doc: &Value, key: &str) -> String {
    match doc.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .collect::<Vec<_>>()
            .join(" "),
        _ => String::new(),
    }
}

pub(crate) fn parse_docs(value: &Value, kind: ResourceKind) -> Result<Vec<GroundingCandidate>, GroundingError> {
    let docs = value
        .pointer("/response/docs")
        .and_then(Value::as_array)
        .ok_or_else(|| GroundingError::OlsProtocolError("response has no response.docs array".into()))?;
    Ok(docs
        .iter()
        .map(|doc| {
            let mut source = text_field(doc, "ontology_name");
            if source.is_empty() {
                source = text_field(doc, "ontology_prefix");
            }
            GroundingCandidate {
                iri: text_field(doc, "iri"),
                label: text_field(doc, "label"),
                description: text_field(doc, "description"),
                source_ontology: source,
                resource_kind: kind,
                score: None,
            }
        })
        .collect())
}

impl OntologySearch for OlsClient {
    fn search(
        &self,
        query: &str,
        kinds: &[ResourceKind],
        allow: Option<&OntologyAllowList>,
    ) -> Result<Vec<GroundingCandidate>, GroundingError> {
        if query.trim().is_empty() {
            return Err(GroundingError::EmptyQuery);
        }
        let mut out = Vec::new();
        for &kind in kinds {
            let value = self.fetch(&self.search_url(query, kind, allow)?)?;
            out.extend(parse_docs(&value, kind)?);
        }
        // the server-side filter is advisory; enforce it here as well
        if let Some(allow) = allow.filter(|a| !a.is_empty()) {
            out.retain(|c| allow.contains(&c.source_ontology));
        }
        Ok(out)
    }
}
