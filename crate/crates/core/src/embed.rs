//! Text embeddings from an OpenAI-compatible `/embeddings` endpoint, with a
//! content-addressed cache, plus cosine similarity.

use std::collections::HashMap;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{ApiKey, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("embedding endpoint unreachable: {0}")]
    EmbedderUnreachable(String),
    #[error("embedding protocol error: {0}")]
    ProtocolError(String),
    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            EmbedError::EmbedderUnreachable(_) => "EmbedderUnreachable",
            EmbedError::ProtocolError(_) => "EmbedderProtocolError",
            EmbedError::DimensionMismatch { .. } => "DimensionMismatch",
        }
    }
}

/// Turns texts into vectors, one per input, in input order.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    /// Identifies the backend (endpoint and model) for cache keys.
    fn identity(&self) -> String;
}

/// Cosine similarity clamped to [-1, 1]; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    api_key: ApiKey,
    retry: RetryPolicy,
    batch_size: usize,
    http: Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: ApiKey) -> Result<Self, EmbedError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::ProtocolError(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            batch_size: 64,
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/embeddings", self.base_url.trim_end_matches('/'))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let body = json!({ "model": self.model, "input": texts });
        let tries = self.retry.max_tries.max(1);
        let mut last = String::new();
        for attempt in 1..=tries {
            if attempt > 1 {
                thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut req = self.http.post(self.endpoint()).json(&body);
            if !self.api_key.is_empty() {
                req = req.bearer_auth(self.api_key.expose());
            }
            let resp = match req.send() {
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
                return Err(EmbedError::ProtocolError(format!("HTTP {status}")));
            }
            let value: Value = resp.json().map_err(|e| EmbedError::ProtocolError(e.to_string()))?;
            return parse_embeddings(&value, texts.len());
        }
        Err(EmbedError::EmbedderUnreachable(last))
    }
}

fn parse_embeddings(value: &Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| EmbedError::ProtocolError("response has no data array".into()))?;
    if data.len() != expected {
        return Err(EmbedError::ProtocolError(format!(
            "asked for {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut out = vec![Vec::new(); expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .and_then(|v| v.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| EmbedError::ProtocolError("embedding is not a number array".into()))?;
        let slot = out
            .get_mut(index)
            .ok_or_else(|| EmbedError::ProtocolError(format!("embedding index {index} out of range")))?;
        *slot = vector;
    }
    Ok(out)
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }

    fn identity(&self) -> String {
        format!("{}#{}", self.endpoint(), self.model)
    }
}

/// Memoizes another embedder, keyed by (backend identity, SHA-256 of text).
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<HashMap<(String, [u8; 32]), Vec<f64>>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::default(),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let id = self.inner.identity();
        let keys: Vec<(String, [u8; 32])> = texts
            .iter()
            .map(|t| (id.clone(), Sha256::digest(t.as_bytes()).into()))
            .collect();
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .zip(&keys)
                .filter(|(_, k)| !cache.contains_key(*k) && seen.insert(k.1))
                .map(|(t, _)| t.clone())
                .collect()
        };
        // network call happens outside the lock
        if !missing.is_empty() {
            let vectors = self.inner.embed(&missing)?;
            let mut cache = self.cache.lock().unwrap();
            for (text, vector) in missing.iter().zip(vectors) {
                cache.insert((id.clone(), Sha256::digest(text.as_bytes()).into()), vector);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }
}
