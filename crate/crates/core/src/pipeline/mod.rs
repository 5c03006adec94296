//! Stage orchestration, review gates and the on-disk snapshot store.
//!
//! A run walks Generate (one snapshot, iteration 0), then Refine over the
//! curated papers and Finalize over the extended corpus (iterations 1..=n).
//! Before iteration `i` the feedback mode decides whether a review gate
//! opens; the expert reviews the latest schema and their answer goes into
//! the prompt for paper `i`.

mod experiments;
mod gate;
mod runner;
mod store;

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiments::{plan_experiments, ExperimentRun};
pub use gate::{GateOutcome, ParkingGate, PollingGate, ReviewGate, ScriptedGate};
pub use runner::{Pipeline, ResumeOutcome, RunSpec};
pub use store::{validate_run_id, FeedbackSubmission, SnapshotStore};

use crate::corpus::{CorpusError, CorpusRole};
use crate::feedback::{ChannelMismatch, Feedback, FeedbackMode};
use crate::gateway::GatewayError;
use crate::prompt::{PromptError, StageId};
use crate::schema::{DuplicateGroup, SchemaDiff, SchemaDoc, SchemaError};

pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.5;

/// Source of timestamps, injectable so replays are byte-identical.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Running,
    AwaitingFeedback,
    Completed,
    Failed,
}

/// The next (stage, iteration) to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cursor {
    pub stage: StageId,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub base_url: String,
    pub temperature: f64,
    pub context_limit: usize,
    pub completion_reserve: usize,
    pub max_repair_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub dir: PathBuf,
    pub digest: String,
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub experiment: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub model: ModelSummary,
    pub model_config_digest: String,
    pub feedback_mode: FeedbackMode,
    pub template_digest: String,
    pub corpora: BTreeMap<CorpusRole, CorpusRecord>,
    pub status: RunStatus,
    pub cursor: Cursor,
    pub target_stage: StageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStats {
    pub est_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_paragraphs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_paragraphs: Option<usize>,
}

/// One persisted schema state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub run_id: String,
    pub stage: StageId,
    pub iteration: u32,
    pub schema: SchemaDoc,
    pub source_doc: Option<String>,
    pub feedback_applied: Option<Feedback>,
    pub llm_attempts: u32,
    pub created_at: DateTime<Utc>,
    pub prompt: PromptStats,
}

/// What an expert sees at a gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTicket {
    pub run_id: String,
    pub stage: StageId,
    pub iteration: u32,
    pub feedback_mode: FeedbackMode,
    /// Id of the paper the next call will read.
    pub next_document: String,
    pub current: SchemaDoc,
    pub previous: SchemaDoc,
    pub diff: SchemaDiff,
    pub duplicates: Vec<DuplicateGroup>,
    pub guiding_questions: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    FeedbackChannelMismatch(#[from] ChannelMismatch),
    #[error("edited schema is invalid: {0}")]
    InvalidEditedSchema(SchemaError),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("run {run_id} has no pending review")]
    NoPendingTicket { run_id: String },
    #[error("feedback targets {got_stage}/{got_iteration} but the pending review is {stage}/{iteration}")]
    StaleTicket {
        stage: StageId,
        iteration: u32,
        got_stage: StageId,
        got_iteration: u32,
    },
    #[error("feedback for {stage}/{iteration} was already submitted")]
    FeedbackAlreadySubmitted { stage: StageId, iteration: u32 },
    #[error("run {} is waiting for feedback on {}/{}", ticket.run_id, ticket.stage, ticket.iteration)]
    AwaitingFeedback { ticket: Box<ReviewTicket> },
    #[error("{role} corpus changed since the run started (expected {expected}, found {actual})")]
    DigestMismatch {
        role: CorpusRole,
        expected: String,
        actual: String,
    },
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("invalid run id `{0}`")]
    InvalidRunId(String),
    #[error("{path}: {source}")]
    Store {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    CorruptStore { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Precondition(_) => "Precondition",
            PipelineError::Corpus(e) => e.code(),
            PipelineError::Prompt(PromptError::BudgetImpossible { .. }) => "BudgetImpossible",
            PipelineError::Prompt(_) => "Prompt",
            PipelineError::Gateway(e) => e.code(),
            PipelineError::FeedbackChannelMismatch(_) => "FeedbackChannelMismatch",
            PipelineError::InvalidEditedSchema(_) => "InvalidEditedSchema",
            PipelineError::InvalidFeedback(_) => "InvalidFeedback",
            PipelineError::NoPendingTicket { .. } => "NoPendingTicket",
            PipelineError::StaleTicket { .. } => "StaleTicket",
            PipelineError::FeedbackAlreadySubmitted { .. } => "FeedbackAlreadySubmitted",
            PipelineError::AwaitingFeedback { .. } => "AwaitingFeedback",
            PipelineError::DigestMismatch { .. } => "DigestMismatch",
            PipelineError::UnknownRun(_) => "UnknownRun",
            PipelineError::RunExists(_) => "RunExists",
            PipelineError::InvalidRunId(_) => "InvalidRunId",
            PipelineError::Store { .. } => "Store",
            PipelineError::CorruptStore { .. } => "CorruptStore",
        }
    }

    /// Errors raised by the model call or prompt fitting leave the run
    /// `Failed` (and resumable); everything else leaves the status alone.
    fn fails_run(&self) -> bool {
        matches!(self, PipelineError::Gateway(_) | PipelineError::Prompt(_))
    }
}
