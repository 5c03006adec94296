use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineError, PromptStats, ReviewTicket, RunManifest, RunStatus, Snapshot};
use crate::feedback::Feedback;
use crate::prompt::StageId;
use crate::schema::{parse_schema, serialize_canonical};

const MANIFEST: &str = "manifest.json";
const PENDING: &str = "pending-review.json";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Run ids become directory names, so they are restricted to a safe alphabet.
pub fn validate_run_id(run_id: &str) -> Result<(), PipelineError> {
    let ok = !run_id.is_empty()
        && run_id.len() <= 128
        && !run_id.starts_with('.')
        && run_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(PipelineError::InvalidRunId(run_id.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    run_id: String,
    stage: StageId,
    iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_doc: Option<String>,
    feedback_applied: bool,
    llm_attempts: u32,
    created_at: DateTime<Utc>,
    prompt: PromptStats,
}

/// Directory tree holding every run:
///
/// ```text
/// {root}/{run_id}/manifest.json
/// {root}/{run_id}/pending-review.json
/// {root}/{run_id}/{Stage}/{iteration:03}.schema.json
/// {root}/{run_id}/{Stage}/{iteration:03}.meta.json
/// {root}/{run_id}/{Stage}/{iteration:03}.feedback.json
/// {root}/{run_id}/{Stage}/{iteration:03}.grounding.json
/// ```
///
/// Clones share one write lock; files are replaced atomically so readers in
/// other processes never see partial writes.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
    lock: Arc<Mutex<()>>,
}

fn store_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Store {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir).map_err(store_err(dir))?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        path.file_name().unwrap().to_string_lossy(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(store_err(&tmp))?;
    fs::rename(&tmp, path).map_err(store_err(path))
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store values serialize");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, PipelineError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| PipelineError::CorruptStore {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(store_err(path)(e)),
    }
}

impl SnapshotStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            lock: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub(crate) fn guard(&self) -> MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    fn stage_file(&self, run_id: &str, stage: StageId, iteration: u32, kind: &str) -> PathBuf {
        self.run_dir(run_id)
            .join(stage.as_str())
            .join(format!("{iteration:03}.{kind}.json"))
    }

    pub fn schema_path(&self, run_id: &str, stage: StageId, iteration: u32) -> PathBuf {
        self.stage_file(run_id, stage, iteration, "schema")
    }

    pub fn feedback_path(&self, run_id: &str, stage: StageId, iteration: u32) -> PathBuf {
        self.stage_file(run_id, stage, iteration, "feedback")
    }

    pub fn pending_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(PENDING)
    }

    pub fn run_exists(&self, run_id: &str) -> bool {
        validate_run_id(run_id).is_ok() && self.run_dir(run_id).join(MANIFEST).is_file()
    }

    /// Writes a brand-new manifest; fails if the run already exists.
    pub(crate) fn create_run(&self, manifest: &RunManifest) -> Result<(), PipelineError> {
        validate_run_id(&manifest.run_id)?;
        let dir = self.run_dir(&manifest.run_id);
        fs::create_dir_all(&self.root).map_err(store_err(&self.root))?;
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(PipelineError::RunExists(manifest.run_id.clone()))
            }
            Err(e) => return Err(store_err(&dir)(e)),
        }
        self.save_manifest(manifest)
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, PipelineError> {
        validate_run_id(run_id).map_err(|_| PipelineError::UnknownRun(run_id.to_string()))?;
        read_json(&self.run_dir(run_id).join(MANIFEST))?.ok_or_else(|| PipelineError::UnknownRun(run_id.to_string()))
    }

    pub(crate) fn save_manifest(&self, manifest: &RunManifest) -> Result<(), PipelineError> {
        write_atomic(&self.run_dir(&manifest.run_id).join(MANIFEST), &to_json_bytes(manifest))
    }

    /// Read-modify-write of a manifest under the store lock.
    pub(crate) fn update_manifest(
        &self,
        run_id: &str,
        f: impl FnOnce(&mut RunManifest),
    ) -> Result<RunManifest, PipelineError> {
        let _guard = self.guard();
        let mut manifest = self.load_manifest(run_id)?;
        f(&mut manifest);
        self.save_manifest(&manifest)?;
        Ok(manifest)
    }

    /// Manifests of every run, sorted by run id.
    pub fn list_runs(&self) -> Result<Vec<RunManifest>, PipelineError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(store_err(&self.root)(e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(MANIFEST).is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|id| validate_run_id(id).is_ok())
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load_manifest(id)).collect()
    }

    pub(crate) fn write_snapshot(&self, snapshot: &Snapshot) -> Result<(), PipelineError> {
        let (run, stage, i) = (&snapshot.run_id, snapshot.stage, snapshot.iteration);
        if let Some(feedback) = &snapshot.feedback_applied {
            let path = self.feedback_path(run, stage, i);
            if !path.exists() {
                write_atomic(&path, &to_json_bytes(feedback))?;
            }
        }
        let meta = SnapshotMeta {
            run_id: run.clone(),
            stage,
            iteration: i,
            source_doc: snapshot.source_doc.clone(),
            feedback_applied: snapshot.feedback_applied.is_some(),
            llm_attempts: snapshot.llm_attempts,
            created_at: snapshot.created_at,
            prompt: snapshot.prompt,
        };
        write_atomic(&self.stage_file(run, stage, i, "meta"), &to_json_bytes(&meta))?;
        write_atomic(
            &self.schema_path(run, stage, i),
            serialize_canonical(&snapshot.schema).as_bytes(),
        )
    }

    pub fn load_snapshot(&self, run_id: &str, stage: StageId, iteration: u32) -> Result<Option<Snapshot>, PipelineError> {
        let schema_path = self.schema_path(run_id, stage, iteration);
        let text = match fs::read_to_string(&schema_path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(store_err(&schema_path)(e)),
        };
        let schema = parse_schema(&text).map_err(|e| PipelineError::CorruptStore {
            path: schema_path.clone(),
            message: e.to_string(),
        })?;
        let meta_path = self.stage_file(run_id, stage, iteration, "meta");
        let meta: SnapshotMeta = read_json(&meta_path)?.ok_or_else(|| PipelineError::CorruptStore {
            path: meta_path.clone(),
            message: "missing snapshot metadata".into(),
        })?;
        let feedback_applied = if meta.feedback_applied {
            self.load_feedback(run_id, stage, iteration)?
        } else {
            None
        };
        Ok(Some(Snapshot {
            run_id: meta.run_id,
            stage,
            iteration,
            schema,
            source_doc: meta.source_doc,
            feedback_applied,
            llm_attempts: meta.llm_attempts,
            created_at: meta.created_at,
            prompt: meta.prompt,
        }))
    }

    /// Every snapshot of a run in workflow order.
    pub fn list_snapshots(&self, run_id: &str) -> Result<Vec<Snapshot>, PipelineError> {
        self.load_manifest(run_id)?;
        let mut out = Vec::new();
        for stage in StageId::ALL {
            let dir = self.run_dir(run_id).join(stage.as_str());
            let mut iterations: Vec<u32> = match fs::read_dir(&dir) {
                Ok(entries) => entries
                    .filter_map(|e| e.ok())
                    .filter_map(|e| {
                        let name = e.file_name().to_string_lossy().into_owned();
                        name.strip_suffix(".schema.json")?.parse().ok()
                    })
                    .collect(),
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(store_err(&dir)(e)),
            };
            iterations.sort_unstable();
            for i in iterations {
                out.extend(self.load_snapshot(run_id, stage, i)?);
            }
        }
        Ok(out)
    }

    pub fn load_feedback(&self, run_id: &str, stage: StageId, iteration: u32) -> Result<Option<Feedback>, PipelineError> {
        read_json(&self.feedback_path(run_id, stage, iteration))
    }

    pub fn pending_ticket(&self, run_id: &str) -> Result<Option<ReviewTicket>, PipelineError> {
        self.load_manifest(run_id)?;
        read_json(&self.pending_path(run_id))
    }

    /// Publishes `ticket` and marks the run as waiting for it.
    pub(crate) fn open_ticket(&self, ticket: &ReviewTicket, now: DateTime<Utc>) -> Result<(), PipelineError> {
        let _guard = self.guard();
        let mut manifest = self.load_manifest(&ticket.run_id)?;
        write_atomic(&self.pending_path(&ticket.run_id), &to_json_bytes(ticket))?;
        manifest.status = RunStatus::AwaitingFeedback;
        manifest.updated_at = now;
        self.save_manifest(&manifest)
    }

    pub(crate) fn clear_ticket(&self, run_id: &str) -> Result<(), PipelineError> {
        let path = self.pending_path(run_id);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(store_err(&path)(e)),
            _ => Ok(()),
        }
    }

    /// Accepts feedback for the pending ticket of `run_id`.
    ///
    /// The feedback file is created with `create_new`, so among concurrent
    /// submissions (from any process) exactly one wins; the rest get
    /// `FeedbackAlreadySubmitted`. The ticket is removed last, which is what
    /// a blocked pipeline waits for.
    pub fn submit_feedback(
        &self,
        run_id: &str,
        stage: StageId,
        iteration: u32,
        feedback: &Feedback,
    ) -> Result<(), PipelineError> {
        let _guard = self.guard();
        let manifest = self.load_manifest(run_id)?;
        let ticket: ReviewTicket = read_json(&self.pending_path(run_id))?.ok_or_else(|| PipelineError::NoPendingTicket {
            run_id: run_id.to_string(),
        })?;
        if (ticket.stage, ticket.iteration) != (stage, iteration) {
            return Err(PipelineError::StaleTicket {
                stage: ticket.stage,
                iteration: ticket.iteration,
                got_stage: stage,
                got_iteration: iteration,
            });
        }
        manifest.feedback_mode.check(feedback)?;

        let path = self.feedback_path(run_id, stage, iteration);
        fs::create_dir_all(path.parent().unwrap()).map_err(store_err(&path))?;
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(PipelineError::FeedbackAlreadySubmitted { stage, iteration })
            }
            Err(e) => return Err(store_err(&path)(e)),
        };
        file.write_all(&to_json_bytes(feedback)).map_err(store_err(&path))?;
        file.sync_all().map_err(store_err(&path))?;

        let mut manifest = self.load_manifest(run_id)?;
        if manifest.status == RunStatus::AwaitingFeedback {
            manifest.status = RunStatus::Running;
            self.save_manifest(&manifest)?;
        }
        self.clear_ticket(run_id)
    }

    /// Stores a grounding report beside a snapshot.
    pub fn write_grounding(&self, run_id: &str, stage: StageId, iteration: u32, report: &Value) -> Result<PathBuf, PipelineError> {
        let path = self.stage_file(run_id, stage, iteration, "grounding");
        write_atomic(&path, &to_json_bytes(report))?;
        Ok(path)
    }
}

/// Wire form of a feedback submission, shared by the CLI and the service.
#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackSubmission {
    pub stage: StageId,
    pub iteration: u32,
    #[serde(default)]
    pub descriptive: Option<String>,
    /// A schema object, or the schema as JSON text.
    #[serde(default)]
    pub edited_schema: Option<Value>,
    #[serde(default)]
    pub author: Option<String>,
}

impl FeedbackSubmission {
    /// Validates the submission into a [`Feedback`] stamped with `now`.
    pub fn into_feedback(self, now: DateTime<Utc>) -> Result<(StageId, u32, Feedback), PipelineError> {
        let edited = match self.edited_schema {
            None | Some(Value::Null) => None,
            Some(Value::String(text)) => Some(parse_schema(&text).map_err(PipelineError::InvalidEditedSchema)?),
            Some(value) => Some(crate::schema::parse_value(value).map_err(PipelineError::InvalidEditedSchema)?),
        };
        let author = self.author.unwrap_or_else(|| "expert".into());
        let feedback = Feedback::new(self.descriptive, edited, author, now)
            .map_err(|e| PipelineError::InvalidFeedback(e.to_string()))?;
        Ok((self.stage, self.iteration, feedback))
    }
}
