use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;

use chrono::DateTime;
use reqwest::blocking::Client;
use schema_miner::corpus::{load_corpus, CorpusRole};
use schema_miner::feedback::{FeedbackCadence, FeedbackChannel, FeedbackMode, GUIDING_QUESTIONS};
use schema_miner::gateway::{ChatModel, CompletionResult, FinishReason, GatewayError, ModelConfig};
use schema_miner::pipeline::{
    FixedClock, ParkingGate, Pipeline, PipelineError, ResumeOutcome, RunSpec, RunStatus, ScriptedGate, SnapshotStore,
};
use schema_miner::prompt::{PromptEngine, PromptPair, TemplateSet};
use schema_miner::text::CharEstimator;
use schema_miner_service::{spawn, ServiceConfig, ServiceError, ServiceHandle};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

struct Numbered(ModelConfig, AtomicUsize);

impl ChatModel for Numbered {
    fn complete(&self, _: &PromptPair) -> Result<CompletionResult, GatewayError> {
        let n = self.1.fetch_add(1, Ordering::SeqCst) + 1;
        Ok(CompletionResult {
            raw_text: format!(r#"{{"type":"object","properties":{{"p{n}":{{"type":"string","description":"property {n}"}}}}}}"#),
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }
    fn config(&self) -> &ModelConfig {
        &self.0
    }
}

fn clock() -> Arc<FixedClock> {
    Arc::new(FixedClock(DateTime::from_timestamp(1_700_000_000, 0).unwrap()))
}

struct Env {
    tmp: tempfile::TempDir,
    pipeline: Pipeline,
}

impl Env {
    /// A run parked at the first Stage 2 gate.
    fn parked(channel: FeedbackChannel) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        for (dir, name, body) in [
            ("stage-1", "spec.txt", "Specification text."),
            ("stage-2/research-papers", "a.txt", "Paper a."),
            ("stage-2/research-papers", "b.txt", "Paper b."),
        ] {
            fs::create_dir_all(data.join(dir)).unwrap();
            fs::write(data.join(dir).join(name), body).unwrap();
        }
        let pipeline = Pipeline::new(
            SnapshotStore::new(tmp.path().join("runs")),
            PromptEngine::new(TemplateSet::default()),
            Arc::new(Numbered(ModelConfig::new("http://fake", "fake"), AtomicUsize::new(0))),
        )
        .with_clock(clock());
        let mode = FeedbackMode::new(channel, FeedbackCadence::EveryIteration).unwrap();
        pipeline
            .start_run(RunSpec {
                run_id: "run1".into(),
                mode,
                experiment: None,
            })
            .unwrap();
        let load = |role: CorpusRole| load_corpus(&data.join(role.default_dir()), role, &CharEstimator).unwrap();
        pipeline.run_stage1("run1", &load(CorpusRole::Specification)).unwrap();
        let err = pipeline.run_stage2("run1", &load(CorpusRole::Curated), &ParkingGate).unwrap_err();
        assert!(matches!(err, PipelineError::AwaitingFeedback { .. }));
        Self { tmp, pipeline }
    }

    fn runs(&self) -> PathBuf {
        self.tmp.path().join("runs")
    }

    fn serve(&self, token: Option<&str>) -> ServiceHandle {
        let cfg = ServiceConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            token: token.map(String::from),
            ui_dir: None,
        };
        spawn(cfg, SnapshotStore::new(self.runs()), clock()).unwrap()
    }
}

fn tree_digest(root: &Path) -> String {
    fn walk(dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.push((p.display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    let mut h = Sha256::new();
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

fn get(url: &str) -> (u16, Value) {
    let resp = Client::new().get(url).send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

fn post(url: &str, body: &Value, token: Option<&str>) -> (u16, Value) {
    let mut req = Client::new().post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

#[test]
fn health_and_not_found() {
    let env = Env::parked(FeedbackChannel::Combined);
    let svc = env.serve(None);
    let text = Client::new().get(format!("{}/health", svc.url())).send().unwrap();
    assert_eq!(text.status().as_u16(), 200);
    assert_eq!(text.text().unwrap(), "ok");
    let (s, body) = get(&format!("{}/runs/nope", svc.url()));
    assert_eq!(s, 404);
    assert_eq!(body["error"]["code"], "UnknownRun");
    assert_eq!(get(&format!("{}/runs/run1/snapshots/Nowhere/0", svc.url())).0, 400);
    assert_eq!(get(&format!("{}/runs/run1/snapshots/Refine/9", svc.url())).0, 404);
}

#[test]
fn reads_do_not_mutate() {
    let env = Env::parked(FeedbackChannel::Combined);
    let svc = env.serve(None);
    let before = tree_digest(&env.runs());
    let base = format!("{}/runs", svc.url());

    let (s, runs) = get(&base);
    assert_eq!(s, 200);
    assert_eq!(runs["runs"][0]["run_id"], "run1");
    let (_, run) = get(&format!("{base}/run1"));
    assert_eq!(run["run"]["status"], json!(RunStatus::AwaitingFeedback));
    assert_eq!(run["pending_review"], true);
    let (_, snaps) = get(&format!("{base}/run1/snapshots"));
    assert_eq!(snaps["snapshots"].as_array().unwrap().len(), 1);
    let (_, snap) = get(&format!("{base}/run1/snapshots/Generate/0"));
    assert!(snap["schema"]["properties"]["p1"].is_object());
    let (_, pending) = get(&format!("{base}/run1/pending-review"));
    let ticket = &pending["ticket"];
    assert_eq!(ticket["stage"], "Refine");
    assert_eq!(ticket["iteration"], 1);
    assert_eq!(ticket["guiding_questions"], json!(GUIDING_QUESTIONS));
    assert!(ticket["diff"]["added"].is_array());
    assert!(ticket["duplicates"].is_array());
    let (s, d) = get(&format!("{base}/run1/diff/Generate/0/0"));
    assert_eq!(s, 200);
    assert_eq!(d["diff"]["added"], json!([]));

    assert_eq!(tree_digest(&env.runs()), before);
}

#[test]
fn feedback_validation_and_acceptance() {
    let env = Env::parked(FeedbackChannel::Descriptive);
    let svc = env.serve(Some("tok"));
    let url = format!("{}/runs/run1/feedback", svc.url());
    let good = json!({"stage": "Refine", "iteration": 1, "descriptive": "merge p1 into q"});

    assert_eq!(post(&url, &good, None).0, 401);
    assert_eq!(post(&url, &good, Some("wrong")).0, 401);

    let (s, body) = post(
        &url,
        &json!({"stage": "Refine", "iteration": 1, "edited_schema": {"type": "object", "properties": {}}}),
        Some("tok"),
    );
    assert_eq!(s, 422);
    assert_eq!(body["error"]["code"], "FeedbackChannelMismatch");

    let (s, body) = post(&url, &json!({"stage": "Refine", "iteration": 2, "descriptive": "x"}), Some("tok"));
    assert_eq!(s, 409);
    assert_eq!(body["error"]["code"], "StaleTicket");

    let (s, body) = post(&url, &good, Some("tok"));
    assert_eq!(s, 200, "{body}");
    assert_eq!(body["accepted"], true);
    let (_, pending) = get(&format!("{}/runs/run1/pending-review", svc.url()));
    assert!(pending["ticket"].is_null());
    let (s, _) = post(&url, &good, Some("tok"));
    assert_eq!(s, 409);
}

#[test]
fn invalid_edited_schema_reports_position() {
    let env = Env::parked(FeedbackChannel::Combined);
    let svc = env.serve(None);
    let url = format!("{}/runs/run1/feedback", svc.url());
    let (s, body) = post(
        &url,
        &json!({"stage": "Refine", "iteration": 1, "edited_schema": "{\"type\": \"object\",\n \"properties\": {}"}),
        None,
    );
    assert_eq!(s, 422);
    assert_eq!(body["error"]["code"], "InvalidEditedSchema");
    assert_eq!(body["error"]["position"]["line"], 2);
    assert!(env.pipeline.store().pending_ticket("run1").unwrap().is_some());
}

#[test]
fn concurrent_submissions_exactly_once() {
    let env = Env::parked(FeedbackChannel::Combined);
    let svc = env.serve(None);
    let url = format!("{}/runs/run1/feedback", svc.url());
    let n = 8;
    let barrier = Arc::new(Barrier::new(n));
    let handles: Vec<_> = (0..n)
        .map(|i| {
            let (url, barrier) = (url.clone(), barrier.clone());
            thread::spawn(move || {
                barrier.wait();
                post(&url, &json!({"stage": "Refine", "iteration": 1, "descriptive": format!("answer {i}")}), None).0
            })
        })
        .collect();
    let codes: Vec<u16> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(codes.iter().filter(|&&c| c == 200).count(), 1, "{codes:?}");
    assert_eq!(codes.iter().filter(|&&c| c == 409).count(), n - 1, "{codes:?}");
}

#[test]
fn shutdown_keeps_parked_run_resumable() {
    let env = Env::parked(FeedbackChannel::Combined);
    let svc = env.serve(None);
    assert_eq!(get(&format!("{}/runs/run1", svc.url())).0, 200);
    svc.shutdown().unwrap();

    let m = env.pipeline.store().load_manifest("run1").unwrap();
    assert_eq!(m.status, RunStatus::AwaitingFeedback);
    let svc = env.serve(None);
    let (_, pending) = get(&format!("{}/runs/run1/pending-review", svc.url()));
    assert_eq!(pending["ticket"]["iteration"], 1);
    let (s, _) = post(
        &format!("{}/runs/run1/feedback", svc.url()),
        &json!({"stage": "Refine", "iteration": 1, "descriptive": "ok"}),
        None,
    );
    assert_eq!(s, 200);
    let gate = ScriptedGate::new([schema_miner::feedback::Feedback::new(
        Some("second".into()),
        None,
        "expert",
        DateTime::from_timestamp(0, 0).unwrap(),
    )
    .unwrap()]);
    match env.pipeline.resume("run1", &gate).unwrap() {
        ResumeOutcome::Continued { manifest, .. } => assert_eq!(manifest.status, RunStatus::Completed),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bind_failure_on_taken_port() {
    let env = Env::parked(FeedbackChannel::Combined);
    let first = env.serve(None);
    let cfg = ServiceConfig {
        bind: first.addr(),
        ..ServiceConfig::default()
    };
    let err = spawn(cfg, SnapshotStore::new(env.runs()), clock()).err().unwrap();
    assert!(matches!(err, ServiceError::BindFailure { .. }));
    assert_eq!(err.code(), "BindFailure");
}

#[test]
fn serves_ui_directory() {
    let env = Env::parked(FeedbackChannel::Combined);
    let ui = env.tmp.path().join("ui");
    fs::create_dir_all(&ui).unwrap();
    fs::write(ui.join("index.html"), "<h1>review</h1>").unwrap();
    let cfg = ServiceConfig {
        bind: "127.0.0.1:0".parse().unwrap(),
        token: None,
        ui_dir: Some(ui),
    };
    let svc = spawn(cfg, SnapshotStore::new(env.runs()), clock()).unwrap();
    let body = Client::new().get(format!("{}/", svc.url())).send().unwrap().text().unwrap();
    assert_eq!(body, "<h1>review</h1>");
    assert_eq!(get(&format!("{}/runs", svc.url())).0, 200);
}
