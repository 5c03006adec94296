#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

use schema_miner_testkit::{dynamic_chat, ChatReply, MockServer, RecordedRequest};
use serde_json::Value;
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_schema-miner");

pub fn schema_with(props: &[&str]) -> String {
    let body: Vec<String> = props
        .iter()
        .map(|p| format!(r#""{p}":{{"type":"string","description":"{p} of the film"}}"#))
        .collect();
    format!(r#"{{"type":"object","properties":{{{}}}}}"#, body.join(","))
}

/// Chat mock answering call `n` with a schema holding property `pn`.
pub fn numbered_chat() -> MockServer {
    let n = AtomicUsize::new(0);
    dynamic_chat(move |_| {
        let i = n.fetch_add(1, Ordering::SeqCst) + 1;
        ChatReply::Content(schema_with(&[&format!("p{i}")]))
    })
}

/// Chat mock whose reply depends only on the request's user message.
pub fn content_keyed_chat() -> MockServer {
    dynamic_chat(|body| {
        let mut h = DefaultHasher::new();
        user_message(body).hash(&mut h);
        let tag = format!("h{:08x}", h.finish() as u32);
        ChatReply::Content(format!("```json\n{}\n```", schema_with(&[&tag, "filmThickness"])))
    })
}

pub fn user_message(body: &Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|m| m.iter().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

pub fn chat_bodies(server: &MockServer) -> Vec<Value> {
    server
        .requests()
        .iter()
        .filter(|r| r.path.ends_with("/chat/completions"))
        .map(RecordedRequest::json)
        .collect()
}

/// The schema shown under "Current schema:" in a Refine/Finalize prompt.
pub fn prev_schema(user: &str) -> Option<Value> {
    let rest = &user[user.find("Current schema:")?..];
    let start = rest.find("```json\n")? + "```json\n".len();
    let end = start + rest[start..].find("\n```")?;
    serde_json::from_str(&rest[start..end]).ok()
}

pub struct Workspace {
    pub root: TempDir,
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    fn from(out: Output) -> Self {
        Self {
            code: out.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        }
    }

    /// Last stdout line as JSON.
    pub fn json(&self) -> Value {
        let line = self.stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("null");
        serde_json::from_str(line).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    /// The JSON error line on stderr.
    pub fn error(&self) -> Value {
        let line = self
            .stderr
            .lines()
            .rev()
            .find(|l| l.starts_with("{\"error\""))
            .unwrap_or_else(|| panic!("no error line in stderr: {}", self.stderr));
        serde_json::from_str::<Value>(line).unwrap()["error"].clone()
    }
}

impl Workspace {
    /// A data tree with one specification, `curated` and `extended` papers.
    pub fn new(curated: usize, extended: usize) -> Self {
        let root = tempfile::tempdir().unwrap();
        let ws = Self { root };
        ws.write(
            "data/stage-1/ald-specification.txt",
            "Atomic layer deposition builds films one layer at a time.\n\nA process has a precursor, a co-reactant, a reactor temperature and a number of cycles.",
        );
        for i in 1..=curated {
            ws.write(
                &format!("data/stage-2/research-papers/paper-{i:02}.txt"),
                &format!("Curated paper {i}.\n\nWe report growth per cycle and film thickness at 200 C."),
            );
        }
        for i in 1..=extended {
            ws.write(
                &format!("data/stage-3/research-papers/extended-{i:02}.txt"),
                &format!("Extended paper {i}.\n\nRefractive index and roughness were measured."),
            );
        }
        ws
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.path().join(rel)
    }

    pub fn write(&self, rel: &str, text: &str) {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    /// Writes `.env` pointing the chat client at `chat`.
    pub fn env_for(&self, chat: &MockServer, extra: &[(&str, &str)]) {
        let mut text = format!("LLM_BASE_URL={}\nLLM_MODEL=mock-model\nLLM_API_KEY=sk-test-secret\n", chat.url());
        for (k, v) in extra {
            text.push_str(&format!("{k}={v}\n"));
        }
        self.write(".env", &text);
    }

    pub fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(BIN);
        cmd.env_clear().current_dir(self.root.path()).args(args);
        cmd
    }

    pub fn run(&self, args: &[&str]) -> Run {
        Run::from(self.command(args).output().unwrap())
    }

    pub fn run_with_env(&self, args: &[&str], env: &[(&str, &str)]) -> Run {
        let mut cmd = self.command(args);
        cmd.envs(env.iter().copied());
        Run::from(cmd.output().unwrap())
    }

    pub fn runs(&self) -> PathBuf {
        self.path("runs")
    }
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
