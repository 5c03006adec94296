//! Scriptable HTTP mocks for tests: a generic recording server plus helpers
//! for OpenAI-style chat and embedding endpoints and an OLS-style search API.

pub mod oracle;
pub mod schema_gen;

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread;

use axum::body::Bytes;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// A request as seen by the mock.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl RecordedRequest {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn json(status: u16, value: Value) -> Self {
        Self {
            status,
            body: value.to_string(),
        }
    }
}

type Handler = dyn Fn(&RecordedRequest) -> MockResponse + Send + Sync;

/// A local HTTP server that records every request and answers through a
/// user-supplied handler. Stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    log: Arc<Mutex<Vec<RecordedRequest>>>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&RecordedRequest) -> MockResponse + Send + Sync + 'static) -> Self {
        let handler: Arc<Handler> = Arc::new(handler);
        let log: Arc<Mutex<Vec<RecordedRequest>>> = Arc::default();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();

        let log_in = log.clone();
        let thread = thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new().fallback(move |method: Method, uri: Uri, headers: HeaderMap, body: Bytes| {
                    let handler = handler.clone();
                    let log = log_in.clone();
                    async move {
                        let req = RecordedRequest {
                            method: method.to_string(),
                            path: uri.path().to_string(),
                            query: parse_query(uri.query().unwrap_or("")),
                            headers: headers
                                .iter()
                                .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or("").to_string()))
                                .collect(),
                            body: body.to_vec(),
                        };
                        log.lock().unwrap().push(req.clone());
                        let resp = tokio::task::spawn_blocking(move || handler(&req)).await.unwrap();
                        let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                        let response: Response = (status, [("content-type", "application/json")], resp.body).into_response();
                        response
                    }
                });
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().expect("mock server address");
        Self {
            addr,
            log,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://127.0.0.1:{port}`
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn parse_query(query: &str) -> BTreeMap<String, String> {
    query
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|pair| {
            let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
            (percent_decode(k), percent_decode(v))
        })
        .collect()
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let decoded = (bytes[i] == b'%' && i + 3 <= bytes.len())
            .then(|| std::str::from_utf8(&bytes[i + 1..i + 3]).ok())
            .flatten()
            .and_then(|hex| u8::from_str_radix(hex, 16).ok());
        match (bytes[i], decoded) {
            (_, Some(b)) => {
                out.push(b);
                i += 3;
            }
            (b'+', None) => {
                out.push(b' ');
                i += 1;
            }
            (b, None) => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// One scripted chat reply.
#[derive(Debug, Clone)]
pub enum ChatReply {
    /// 200 with `content` and finish_reason `stop`.
    Content(String),
    /// 200 with finish_reason `length`.
    Truncated(String),
    /// Bare status code with an error body.
    Status(u16),
    /// 200 with a body that is not a chat completion.
    Garbage,
}

/// Builds an OpenAI-style chat completion response body.
pub fn chat_completion_body(content: &str, finish_reason: &str) -> Value {
    json!({
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason
        }],
        "usage": {"prompt_tokens": 11, "completion_tokens": 7, "total_tokens": 18}
    })
}

impl ChatReply {
    pub fn to_response(&self) -> MockResponse {
        match self {
            ChatReply::Content(text) => MockResponse::json(200, chat_completion_body(text, "stop")),
            ChatReply::Truncated(text) => MockResponse::json(200, chat_completion_body(text, "length")),
            ChatReply::Status(code) => MockResponse::json(*code, json!({"error": {"message": format!("mock status {code}")}})),
            ChatReply::Garbage => MockResponse::json(200, json!({"unexpected": true})),
        }
    }
}

/// Mock chat endpoint replaying a fixed script; once the script runs out
/// the last reply repeats.
pub fn scripted_chat(script: Vec<ChatReply>) -> MockServer {
    assert!(!script.is_empty(), "script needs at least one reply");
    let queue = Mutex::new(VecDeque::from(script));
    MockServer::start(move |req| {
        if !req.path.ends_with("/chat/completions") {
            return MockResponse::json(404, json!({"error": "not found"}));
        }
        let mut q = queue.lock().unwrap();
        let reply = if q.len() > 1 { q.pop_front().unwrap() } else { q[0].clone() };
        reply.to_response()
    })
}

/// Mock chat endpoint computing each reply from the request body.
pub fn dynamic_chat(f: impl Fn(&Value) -> ChatReply + Send + Sync + 'static) -> MockServer {
    MockServer::start(move |req| {
        if !req.path.ends_with("/chat/completions") {
            return MockResponse::json(404, json!({"error": "not found"}));
        }
        f(&req.json()).to_response()
    })
}

/// Mock OpenAI-style `/embeddings` endpoint backed by `embed`.
pub fn embedding_server(embed: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static) -> MockServer {
    MockServer::start(move |req| {
        if !req.path.ends_with("/embeddings") {
            return MockResponse::json(404, json!({"error": "not found"}));
        }
        let body = req.json();
        let inputs: Vec<String> = match &body["input"] {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => items.iter().map(|v| v.as_str().unwrap_or("").to_string()).collect(),
            _ => return MockResponse::json(400, json!({"error": "bad input"})),
        };
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .map(|(i, text)| json!({"object": "embedding", "index": i, "embedding": embed(text)}))
            .collect();
        MockResponse::json(200, json!({"object": "list", "data": data, "model": body["model"]}))
    })
}

/// A search hit served by [`ols_server`].
#[derive(Debug, Clone)]
pub struct OlsDoc {
    pub iri: String,
    pub label: String,
    pub description: Vec<String>,
    pub ontology: String,
    pub kind: String,
}

impl OlsDoc {
    pub fn new(iri: &str, label: &str, description: &[&str], ontology: &str, kind: &str) -> Self {
        Self {
            iri: iri.into(),
            label: label.into(),
            description: description.iter().map(|s| s.to_string()).collect(),
            ontology: ontology.into(),
            kind: kind.into(),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "iri": self.iri,
            "label": self.label,
            "description": self.description,
            "ontology_name": self.ontology,
            "type": self.kind,
        })
    }
}

/// Mock OLS `/search`: `docs_for(query, type)` returns the hits, or `None`
/// to answer 503 for that query.
pub fn ols_server(docs_for: impl Fn(&str, &str) -> Option<Vec<OlsDoc>> + Send + Sync + 'static) -> MockServer {
    MockServer::start(move |req| {
        if !req.path.ends_with("/search") {
            return MockResponse::json(404, json!({"error": "not found"}));
        }
        let q = req.query.get("q").cloned().unwrap_or_default();
        let kind = req.query.get("type").cloned().unwrap_or_default();
        match docs_for(&q, &kind) {
            None => MockResponse::json(503, json!({"error": "unavailable"})),
            Some(docs) => {
                let docs: Vec<Value> = docs.iter().filter(|d| d.kind == kind).map(OlsDoc::to_json).collect();
                MockResponse::json(
                    200,
                    json!({"response": {"numFound": docs.len(), "start": 0, "docs": docs}}),
                )
            }
        }
    })
}
