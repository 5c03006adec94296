use std::sync::Arc;

use super::{
    Clock, CorpusRecord, Cursor, GateOutcome, ModelSummary, PipelineError, PromptStats, ReviewGate, ReviewTicket,
    RunFailure, RunManifest, RunStatus, Snapshot, SnapshotStore, SystemClock, DEFAULT_DUPLICATE_THRESHOLD,
};
use crate::corpus::{load_corpus, Corpus, CorpusRole};
use crate::feedback::{Feedback, FeedbackMode, GUIDING_QUESTIONS};
use crate::gateway::{complete_schema_with_repair, ChatModel};
use crate::prompt::{PromptEngine, PromptPair, StageId};
use crate::schema::{diff, find_duplicates, SchemaDoc};

/// Parameters of a new run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: String,
    pub mode: FeedbackMode,
    /// Experiment label; defaults to the mode's label (`1a` .. `4`).
    pub experiment: Option<String>,
}

#[derive(Debug)]
pub enum ResumeOutcome {
    /// Nothing to do; the run already reached its target stage.
    AlreadyCompleted(RunManifest),
    Continued {
        snapshots: Vec<Snapshot>,
        manifest: RunManifest,
    },
}

/// Drives runs against one model, persisting into one store.
#[derive(Clone)]
pub struct Pipeline {
    store: SnapshotStore,
    engine: PromptEngine,
    model: Arc<dyn ChatModel>,
    clock: Arc<dyn Clock>,
    duplicate_threshold: f64,
}

fn corpus_role(stage: StageId) -> CorpusRole {
    match stage {
        StageId::Generate => CorpusRole::Specification,
        StageId::Refine => CorpusRole::Curated,
        StageId::Finalize => CorpusRole::Extended,
    }
}

fn next_stage(stage: StageId) -> Option<StageId> {
    match stage {
        StageId::Generate => Some(StageId::Refine),
        StageId::Refine => Some(StageId::Finalize),
        StageId::Finalize => None,
    }
}

fn corpus_record(corpus: &Corpus) -> CorpusRecord {
    let dir = corpus
        .docs
        .first()
        .and_then(|d| d.origin.parent())
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    CorpusRecord {
        dir,
        digest: corpus.digest(),
        documents: corpus.docs.iter().map(|d| d.id.clone()).collect(),
    }
}

/// The schema the model was shown when it produced `snapshots[idx]`.
fn input_schema(snapshots: &[Snapshot], idx: usize) -> SchemaDoc {
    if let Some(edit) = snapshots[idx].feedback_applied.as_ref().and_then(|f| f.edited_schema.clone()) {
        return edit;
    }
    idx.checked_sub(1)
        .map(|p| snapshots[p].schema.clone())
        .unwrap_or_else(SchemaDoc::empty)
}

impl Pipeline {
    pub fn new(store: SnapshotStore, engine: PromptEngine, model: Arc<dyn ChatModel>) -> Self {
        Self {
            store,
            engine,
            model,
            clock: Arc::new(SystemClock),
            duplicate_threshold: DEFAULT_DUPLICATE_THRESHOLD,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_duplicate_threshold(mut self, threshold: f64) -> Self {
        self.duplicate_threshold = threshold.clamp(0.0, 1.0);
        self
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    pub fn model(&self) -> &dyn ChatModel {
        self.model.as_ref()
    }

    /// Creates the run directory and its manifest, positioned before Stage 1.
    pub fn start_run(&self, spec: RunSpec) -> Result<RunManifest, PipelineError> {
        let cfg = self.model.config();
        let now = self.clock.now();
        let mut notes = Vec::new();
        if cfg.temperature > 0.0 {
            notes.push(format!(
                "temperature {} > 0: model output is sampled, so re-running this configuration \
                 against a live endpoint will not reproduce these snapshots bit for bit",
                cfg.temperature
            ));
        }
        let manifest = RunManifest {
            experiment: spec.experiment.unwrap_or_else(|| spec.mode.experiment_label()),
            run_id: spec.run_id,
            created_at: now,
            updated_at: now,
            model: ModelSummary {
                name: cfg.model_name.clone(),
                base_url: cfg.base_url.clone(),
                temperature: cfg.temperature,
                context_limit: cfg.context_limit,
                completion_reserve: cfg.completion_reserve,
                max_repair_attempts: cfg.max_repair_attempts,
            },
            model_config_digest: cfg.digest(),
            feedback_mode: spec.mode,
            template_digest: self.engine.templates().digest(),
            corpora: Default::default(),
            status: RunStatus::Running,
            cursor: Cursor {
                stage: StageId::Generate,
                iteration: 0,
            },
            target_stage: StageId::Generate,
            error: None,
            notes,
        };
        self.store.create_run(&manifest)?;
        Ok(manifest)
    }

    /// Generates the initial schema from the single specification document.
    /// Returns the existing snapshot if Stage 1 already ran.
    pub fn run_stage1(&self, run_id: &str, spec: &Corpus) -> Result<Snapshot, PipelineError> {
        if spec.role != CorpusRole::Specification || spec.len() != 1 {
            return Err(PipelineError::Precondition(format!(
                "stage 1 needs exactly one specification document, got {} {} document(s)",
                spec.len(),
                spec.role
            )));
        }
        let manifest = self.store.load_manifest(run_id)?;
        if manifest.cursor.stage != StageId::Generate {
            return self
                .store
                .load_snapshot(run_id, StageId::Generate, 0)?
                .ok_or_else(|| PipelineError::Precondition("stage 1 snapshot missing".into()));
        }
        self.begin_stage(run_id, StageId::Generate, spec)?;
        let result = (|| {
            let prompt = self.engine.render_generate(&spec.docs[0].body)?;
            let snapshot = self.call_model(run_id, StageId::Generate, 0, None, None, &prompt)?;
            self.finish_stage(run_id, StageId::Generate)?;
            Ok(snapshot)
        })();
        self.record_failure(run_id, result)
    }

    /// Refines the Stage-1 schema over the curated papers, from the cursor on.
    pub fn run_stage2(&self, run_id: &str, curated: &Corpus, gate: &dyn ReviewGate) -> Result<Vec<Snapshot>, PipelineError> {
        self.run_iterations(run_id, StageId::Refine, curated, gate)
    }

    /// Finalizes over the extended corpus. Calling this is the explicit
    /// confirmation to cross from Stage 2 into Stage 3.
    pub fn run_stage3(&self, run_id: &str, extended: &Corpus, gate: &dyn ReviewGate) -> Result<Vec<Snapshot>, PipelineError> {
        self.run_iterations(run_id, StageId::Finalize, extended, gate)
    }

    /// Continues a run from its cursor up to its target stage, re-checking
    /// every recorded corpus against its digest first.
    pub fn resume(&self, run_id: &str, gate: &dyn ReviewGate) -> Result<ResumeOutcome, PipelineError> {
        let manifest = self.store.load_manifest(run_id)?;
        if manifest.status == RunStatus::Completed {
            tracing::info!(run_id, "run already completed; nothing to resume");
            return Ok(ResumeOutcome::AlreadyCompleted(manifest));
        }
        let mut corpora = Vec::new();
        for (role, record) in &manifest.corpora {
            let corpus = load_corpus(&record.dir, *role, self.engine.estimator())?;
            let actual = corpus.digest();
            if actual != record.digest {
                return Err(PipelineError::DigestMismatch {
                    role: *role,
                    expected: record.digest.clone(),
                    actual,
                });
            }
            corpora.push(corpus);
        }
        let corpus_for = |stage: StageId| {
            let role = corpus_role(stage);
            corpora.iter().find(|c| c.role == role).ok_or_else(|| {
                PipelineError::Precondition(format!("no {role} corpus recorded for run {run_id}; run the stage explicitly"))
            })
        };

        let mut snapshots = Vec::new();
        let mut stage = manifest.cursor.stage;
        loop {
            match stage {
                StageId::Generate => snapshots.push(self.run_stage1(run_id, corpus_for(stage)?)?),
                _ => snapshots.extend(self.run_iterations(run_id, stage, corpus_for(stage)?, gate)?),
            }
            match next_stage(stage) {
                Some(next) if next <= manifest.target_stage => stage = next,
                _ => break,
            }
        }
        Ok(ResumeOutcome::Continued {
            snapshots,
            manifest: self.store.load_manifest(run_id)?,
        })
    }

    fn begin_stage(&self, run_id: &str, stage: StageId, corpus: &Corpus) -> Result<RunManifest, PipelineError> {
        if corpus.role != corpus_role(stage) {
            return Err(PipelineError::Precondition(format!(
                "{stage} needs the {} corpus, got {}",
                corpus_role(stage),
                corpus.role
            )));
        }
        let record = corpus_record(corpus);
        let now = self.clock.now();
        let mut mismatch = None;
        let manifest = self.store.update_manifest(run_id, |m| {
            match m.corpora.get(&corpus.role) {
                Some(old) if old.digest != record.digest => {
                    mismatch = Some(PipelineError::DigestMismatch {
                        role: corpus.role,
                        expected: old.digest.clone(),
                        actual: record.digest.clone(),
                    });
                    return;
                }
                _ => {}
            }
            m.corpora.insert(corpus.role, record);
            m.target_stage = m.target_stage.max(stage);
            if m.status != RunStatus::AwaitingFeedback {
                m.status = RunStatus::Running;
            }
            m.error = None;
            m.updated_at = now;
        })?;
        match mismatch {
            Some(e) => Err(e),
            None => Ok(manifest),
        }
    }

    fn finish_stage(&self, run_id: &str, stage: StageId) -> Result<(), PipelineError> {
        let now = self.clock.now();
        self.store.update_manifest(run_id, |m| {
            if let Some(next) = next_stage(stage) {
                m.cursor = Cursor {
                    stage: next,
                    iteration: 1,
                };
            }
            m.status = if m.target_stage <= stage {
                RunStatus::Completed
            } else {
                RunStatus::Running
            };
            m.updated_at = now;
        })?;
        Ok(())
    }

    fn record_failure<T>(&self, run_id: &str, result: Result<T, PipelineError>) -> Result<T, PipelineError> {
        if let Err(e) = &result {
            if e.fails_run() {
                let now = self.clock.now();
                let failure = RunFailure {
                    code: e.code().to_string(),
                    message: e.to_string(),
                };
                tracing::error!(run_id, code = %failure.code, "run failed: {}", failure.message);
                self.store.update_manifest(run_id, |m| {
                    m.status = RunStatus::Failed;
                    m.error = Some(failure);
                    m.updated_at = now;
                })?;
            }
        }
        result
    }

    fn run_iterations(
        &self,
        run_id: &str,
        stage: StageId,
        corpus: &Corpus,
        gate: &dyn ReviewGate,
    ) -> Result<Vec<Snapshot>, PipelineError> {
        let manifest = self.store.load_manifest(run_id)?;
        if manifest.cursor.stage < stage {
            return Err(PipelineError::Precondition(format!(
                "{stage} cannot start: the run is still at {}",
                manifest.cursor.stage
            )));
        }
        if manifest.cursor.stage > stage {
            return Ok(Vec::new());
        }
        if stage == StageId::Refine && !(crate::corpus::CURATED_MIN..=crate::corpus::CURATED_MAX).contains(&corpus.len())
        {
            return Err(PipelineError::Precondition(format!(
                "curated corpus must hold 1 to 10 documents, got {}",
                corpus.len()
            )));
        }
        if corpus.is_empty() {
            return Err(PipelineError::Precondition(format!("{stage} corpus is empty")));
        }
        let manifest = self.begin_stage(run_id, stage, corpus)?;
        let mode = manifest.feedback_mode;
        let start = manifest.cursor.iteration.max(1);

        let result = (|| {
            let mut out = Vec::new();
            for i in start..=corpus.len() as u32 {
                let doc = &corpus.docs[i as usize - 1];
                let history = self.store.list_snapshots(run_id)?;
                let latest_idx = history
                    .iter()
                    .rposition(|s| (s.stage, s.iteration) < (stage, i))
                    .ok_or_else(|| PipelineError::Precondition("no earlier snapshot to refine".into()))?;

                let feedback = if mode.gate_open(i) {
                    Some(self.obtain_feedback(run_id, stage, i, mode, &doc.id, &history, latest_idx, gate)?)
                } else {
                    None
                };
                let prev = feedback
                    .as_ref()
                    .and_then(|f| f.edited_schema.clone())
                    .unwrap_or_else(|| history[latest_idx].schema.clone());
                let prompt = self.engine.render_iteration(stage, &prev, &doc.body, feedback.as_ref())?;
                out.push(self.call_model(run_id, stage, i, Some(doc.id.clone()), feedback, &prompt)?);
                let now = self.clock.now();
                self.store.update_manifest(run_id, |m| {
                    m.cursor = Cursor { stage, iteration: i + 1 };
                    m.updated_at = now;
                })?;
            }
            self.finish_stage(run_id, stage)?;
            Ok(out)
        })();
        self.record_failure(run_id, result)
    }

    #[allow(clippy::too_many_arguments)]
    fn obtain_feedback(
        &self,
        run_id: &str,
        stage: StageId,
        iteration: u32,
        mode: FeedbackMode,
        next_document: &str,
        history: &[Snapshot],
        latest_idx: usize,
        gate: &dyn ReviewGate,
    ) -> Result<Feedback, PipelineError> {
        if let Some(feedback) = self.store.load_feedback(run_id, stage, iteration)? {
            self.store.clear_ticket(run_id)?;
            return Ok(feedback);
        }
        let current = history[latest_idx].schema.clone();
        let previous = input_schema(history, latest_idx);
        let ticket = ReviewTicket {
            run_id: run_id.to_string(),
            stage,
            iteration,
            feedback_mode: mode,
            next_document: next_document.to_string(),
            diff: diff(&previous, &current),
            duplicates: find_duplicates(&current, self.duplicate_threshold),
            current,
            previous,
            guiding_questions: GUIDING_QUESTIONS.iter().map(|q| q.to_string()).collect(),
        };
        self.store.open_ticket(&ticket, self.clock.now())?;
        tracing::info!(run_id, %stage, iteration, "waiting for expert feedback");
        match gate.wait(&self.store, &ticket)? {
            GateOutcome::Parked => Err(PipelineError::AwaitingFeedback { ticket: Box::new(ticket) }),
            GateOutcome::Submitted => {
                let feedback = self.store.load_feedback(run_id, stage, iteration)?.ok_or_else(|| {
                    PipelineError::Precondition("gate reported feedback but none is stored".into())
                })?;
                let now = self.clock.now();
                self.store.update_manifest(run_id, |m| {
                    m.status = RunStatus::Running;
                    m.updated_at = now;
                })?;
                Ok(feedback)
            }
        }
    }

    fn call_model(
        &self,
        run_id: &str,
        stage: StageId,
        iteration: u32,
        source_doc: Option<String>,
        feedback: Option<Feedback>,
        prompt: &PromptPair,
    ) -> Result<Snapshot, PipelineError> {
        let cfg = self.model.config();
        let prompt = self.engine.fit_to_budget(prompt, cfg.context_limit, cfg.completion_reserve)?;
        tracing::info!(run_id, %stage, iteration, est_tokens = prompt.est_tokens, "calling model");
        let outcome = complete_schema_with_repair(self.model.as_ref(), &prompt, self.engine.estimator())?;
        let snapshot = Snapshot {
            run_id: run_id.to_string(),
            stage,
            iteration,
            schema: outcome.schema,
            source_doc,
            feedback_applied: feedback,
            llm_attempts: outcome.attempts,
            created_at: self.clock.now(),
            prompt: PromptStats {
                est_tokens: prompt.est_tokens,
                kept_paragraphs: prompt.truncation.map(|t| t.kept_paragraphs),
                total_paragraphs: prompt.truncation.map(|t| t.total_paragraphs),
            },
        };
        self.store.write_snapshot(&snapshot)?;
        Ok(snapshot)
    }
}
