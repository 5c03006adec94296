use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::Args;
use schema_miner::corpus::{Corpus, CorpusRole};
use schema_miner::feedback::FeedbackMode;
use schema_miner::pipeline::{
    plan_experiments, GateOutcome, ParkingGate, Pipeline, PipelineError, PollingGate, ResumeOutcome, ReviewGate,
    ReviewTicket, RunSpec, RunStatus, Snapshot, SnapshotStore, SystemClock,
};
use schema_miner::prompt::StageId;
use schema_miner_service::{ServiceConfig, ServiceHandle};
use serde_json::{json, Value};

use super::{resolve_mode, Ctx, GateArgs, ResumeArgs, RunArgs, Stage2Args, Stage3Args};
use crate::{CliError, Output};

/// Announces each ticket on stderr, then blocks until feedback arrives.
struct ConsoleGate {
    inner: PollingGate,
}

impl ReviewGate for ConsoleGate {
    fn wait(&self, store: &SnapshotStore, ticket: &ReviewTicket) -> Result<GateOutcome, PipelineError> {
        let run = &ticket.run_id;
        eprintln!(
            "review needed: run {run}, {} iteration {} (next paper: {})",
            ticket.stage, ticket.iteration, ticket.next_document
        );
        eprintln!("ticket: {}", store.pending_path(run).display());
        for (i, q) in ticket.guiding_questions.iter().enumerate() {
            eprintln!("  {}. {q}", i + 1);
        }
        eprintln!(
            "answer with: schema-miner feedback submit --run-id {run} --file <feedback.json> (mode {})",
            ticket.feedback_mode
        );
        self.inner.wait(store, ticket)
    }
}

fn build_gate(ctx: &Ctx, g: &GateArgs) -> Result<(Box<dyn ReviewGate>, Option<ServiceHandle>), CliError> {
    if g.park {
        return Ok((Box::new(ParkingGate), None));
    }
    let timeout = match g.wait_timeout {
        Some(s) if s.is_finite() && s >= 0.0 => Some(Duration::from_secs_f64(s)),
        Some(s) => return Err(CliError::usage("BadArgument", format!("--wait-timeout {s} is not a duration"))),
        None => None,
    };
    let service = if g.serve {
        let cfg = ServiceConfig {
            bind: g.bind,
            token: ctx.cfg.get("REVIEW_TOKEN").map(String::from),
            ui_dir: None,
        };
        let handle = schema_miner_service::spawn(cfg, ctx.store(), Arc::new(SystemClock))?;
        eprintln!("review service: {}", handle.url());
        Some(handle)
    } else {
        None
    };
    let gate = ConsoleGate {
        inner: PollingGate {
            interval: Duration::from_millis(g.poll_ms.max(1)),
            timeout,
        },
    };
    Ok((Box::new(gate), service))
}

fn new_run_id() -> String {
    format!("run-{}", &uuid::Uuid::new_v4().simple().to_string()[..8])
}

fn snapshot_json(store: &SnapshotStore, s: &Snapshot) -> Value {
    json!({
        "stage": s.stage,
        "iteration": s.iteration,
        "path": store.schema_path(&s.run_id, s.stage, s.iteration),
        "llm_attempts": s.llm_attempts,
    })
}

/// Success line for a stage command; a parked gate is a success too.
fn outcome(
    command: &str,
    store: &SnapshotStore,
    run_id: &str,
    result: Result<Vec<Snapshot>, PipelineError>,
) -> Result<Output, CliError> {
    let (snapshots, pending) = match result {
        Ok(s) => (s, None),
        Err(PipelineError::AwaitingFeedback { ticket }) => (Vec::new(), Some(ticket)),
        Err(e) => return Err(CliError::from(e).with_run(run_id)),
    };
    let manifest = store.load_manifest(run_id).map_err(|e| CliError::from(e).with_run(run_id))?;
    let mut line = json!({
        "ok": true,
        "command": command,
        "run_id": run_id,
        "status": manifest.status,
        "cursor": manifest.cursor,
        "snapshots": snapshots.iter().map(|s| snapshot_json(store, s)).collect::<Vec<_>>(),
    });
    if let Some(t) = pending {
        line["pending_review"] = json!({
            "stage": t.stage,
            "iteration": t.iteration,
            "ticket": store.pending_path(run_id),
        });
    }
    Ok(Output::Json(line))
}

fn corpus_plan(ctx: &Ctx, roles: &[CorpusRole]) -> Value {
    let mut out = serde_json::Map::new();
    for role in roles {
        let dir = ctx.corpus_dir(*role);
        let entry = match ctx.corpus(*role) {
            Ok(c) => json!({"dir": dir, "documents": c.docs.iter().map(|d| &d.id).collect::<Vec<_>>()}),
            Err(e) => json!({"dir": dir, "error": {"code": e.code, "message": e.message}}),
        };
        out.insert(role.as_str().into(), entry);
    }
    Value::Object(out)
}

fn dry_plan(ctx: &Ctx, command: &str, run_id: &str, mode: Option<FeedbackMode>, roles: &[CorpusRole]) -> Result<Output, CliError> {
    let store = ctx.store();
    let existing = store.load_manifest(run_id).ok();
    let (model, mode) = match &existing {
        Some(m) => (ctx.model_for_run(m), Some(m.feedback_mode)),
        None => (ctx.cfg.model_config(None)?, Some(mode.unwrap_or(FeedbackMode::NONE))),
    };
    Ok(Output::Json(json!({
        "ok": true,
        "dry_run": true,
        "command": command,
        "run_id": run_id,
        "exists": existing.is_some(),
        "cursor": existing.as_ref().map(|m| m.cursor),
        "model": {
            "name": model.model_name,
            "base_url": model.base_url,
            "temperature": model.temperature,
            "context_limit": model.context_limit,
        },
        "feedback_mode": mode,
        "experiment": mode.map(|m| m.experiment_label()),
        "corpora": corpus_plan(ctx, roles),
        "templates": ctx.templates_dir(),
    })))
}

/// Pipeline for `run_id`, creating the run when it does not exist yet.
fn open_run(ctx: &Ctx, run_id: &str, mode: Option<FeedbackMode>) -> Result<Pipeline, CliError> {
    let store = ctx.store();
    let with_run = |e: PipelineError| CliError::from(e).with_run(run_id);
    if store.run_exists(run_id) {
        let manifest = store.load_manifest(run_id).map_err(with_run)?;
        if let Some(m) = mode.filter(|m| *m != manifest.feedback_mode) {
            return Err(CliError::usage(
                "ModeConflict",
                format!("run was created with feedback mode {}, not {m}", manifest.feedback_mode),
            )
            .with_run(run_id));
        }
        return ctx.pipeline(ctx.model_for_run(&manifest));
    }
    let pipeline = ctx.pipeline(ctx.cfg.model_config(None)?)?;
    pipeline
        .start_run(RunSpec {
            run_id: run_id.to_string(),
            mode: mode.unwrap_or(FeedbackMode::NONE),
            experiment: None,
        })
        .map_err(with_run)?;
    Ok(pipeline)
}

fn validate_id(run_id: &str) -> Result<(), CliError> {
    schema_miner::pipeline::validate_run_id(run_id).map_err(CliError::from)
}

pub(super) fn stage1(ctx: &Ctx, a: RunArgs) -> Result<Output, CliError> {
    let mode = resolve_mode(a.feedback_mode, a.cadence)?;
    let run_id = a.run_id.unwrap_or_else(new_run_id);
    validate_id(&run_id)?;
    if ctx.dry_run {
        return dry_plan(ctx, "stage1", &run_id, mode, &[CorpusRole::Specification]);
    }
    let spec = ctx.corpus(CorpusRole::Specification)?;
    let pipeline = open_run(ctx, &run_id, mode)?;
    let result = pipeline.run_stage1(&run_id, &spec).map(|s| vec![s]);
    outcome("stage1", pipeline.store(), &run_id, result)
}

pub(super) fn stage2(ctx: &Ctx, a: Stage2Args) -> Result<Output, CliError> {
    let mode = resolve_mode(a.run.feedback_mode, a.run.cadence)?;
    let run_id = a.run.run_id.unwrap_or_else(new_run_id);
    validate_id(&run_id)?;
    if ctx.dry_run {
        return dry_plan(ctx, "stage2", &run_id, mode, &[CorpusRole::Specification, CorpusRole::Curated]);
    }
    let curated = ctx.corpus(CorpusRole::Curated)?;
    let pipeline = open_run(ctx, &run_id, mode)?;
    let manifest = pipeline.store().load_manifest(&run_id).map_err(CliError::from)?;
    let mut done = Vec::new();
    if manifest.cursor.stage == StageId::Generate {
        let spec = ctx.corpus(CorpusRole::Specification)?;
        done.push(pipeline.run_stage1(&run_id, &spec).map_err(|e| CliError::from(e).with_run(&run_id))?);
    }
    let (gate, _service) = build_gate(ctx, &a.gate)?;
    let result = pipeline.run_stage2(&run_id, &curated, gate.as_ref()).map(|mut s| {
        done.append(&mut s);
        done
    });
    outcome("stage2", pipeline.store(), &run_id, result)
}

pub(super) fn stage3(ctx: &Ctx, a: Stage3Args) -> Result<Output, CliError> {
    validate_id(&a.run_id)?;
    if !a.confirm {
        return Err(CliError::usage(
            "ConfirmationRequired",
            "stage3 moves the run past Stage 2; pass --confirm",
        )
        .with_run(&a.run_id));
    }
    if ctx.dry_run {
        return dry_plan(ctx, "stage3", &a.run_id, None, &[CorpusRole::Extended]);
    }
    let store = ctx.store();
    let manifest = store.load_manifest(&a.run_id)?;
    let extended = ctx.corpus(CorpusRole::Extended)?;
    let pipeline = ctx.pipeline(ctx.model_for_run(&manifest))?;
    let (gate, _service) = build_gate(ctx, &a.gate)?;
    let result = pipeline.run_stage3(&a.run_id, &extended, gate.as_ref());
    outcome("stage3", &store, &a.run_id, result)
}

pub(super) fn resume(ctx: &Ctx, a: ResumeArgs) -> Result<Output, CliError> {
    validate_id(&a.run_id)?;
    let store = ctx.store();
    let manifest = store.load_manifest(&a.run_id)?;
    if ctx.dry_run {
        let roles: Vec<CorpusRole> = manifest.corpora.keys().copied().collect();
        return dry_plan(ctx, "resume", &a.run_id, None, &roles);
    }
    let pipeline = ctx.pipeline(ctx.model_for_run(&manifest))?;
    let (gate, _service) = build_gate(ctx, &a.gate)?;
    let result = pipeline.resume(&a.run_id, gate.as_ref()).map(|o| match o {
        ResumeOutcome::AlreadyCompleted(_) => Vec::new(),
        ResumeOutcome::Continued { snapshots, .. } => snapshots,
    });
    outcome("resume", &store, &a.run_id, result)
}

#[derive(Debug, Args)]
pub(super) struct ExperimentArgs {
    /// Every feedback mode for every model in LLM_MODELS (or --models).
    #[arg(long)]
    matrix: bool,
    /// Run id prefix.
    #[arg(long, default_value = "exp")]
    prefix: String,
    /// Runs executed at once.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Continue finished runs into Stage 3.
    #[arg(long)]
    confirm_stage3: bool,
}

struct Batch<'a> {
    ctx: &'a Ctx,
    spec: Corpus,
    curated: Corpus,
    extended: Option<Corpus>,
}

impl Batch<'_> {
    fn run_one(&self, run_id: &str, model: &str, mode: FeedbackMode, label: &str) -> Result<(), CliError> {
        let store = self.ctx.store();
        let pipeline = if store.run_exists(run_id) {
            let manifest = store.load_manifest(run_id)?;
            self.ctx.pipeline(self.ctx.model_for_run(&manifest))?
        } else {
            let p = self.ctx.pipeline(self.ctx.cfg.model_config(Some(model))?)?;
            p.start_run(RunSpec {
                run_id: run_id.to_string(),
                mode,
                experiment: Some(label.to_string()),
            })?;
            p
        };
        pipeline.run_stage1(run_id, &self.spec)?;
        pipeline.run_stage2(run_id, &self.curated, &ParkingGate)?;
        if let Some(ext) = &self.extended {
            pipeline.run_stage3(run_id, ext, &ParkingGate)?;
        }
        Ok(())
    }
}

pub(super) fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<Output, CliError> {
    if !a.matrix {
        return Err(CliError::usage("Usage", "experiment needs --matrix"));
    }
    let models = ctx.cfg.models();
    if models.is_empty() {
        return Err(CliError::usage("MissingConfig", "no models: set LLM_MODELS, LLM_MODEL or --models"));
    }
    let plan = plan_experiments(&a.prefix, &models);
    for r in &plan {
        validate_id(&r.run_id)?;
    }
    if ctx.dry_run {
        return Ok(Output::Json(json!({
            "ok": true,
            "dry_run": true,
            "command": "experiment",
            "scheduled": plan.len(),
            "runs": plan,
            "corpora": corpus_plan(ctx, &[CorpusRole::Specification, CorpusRole::Curated]),
        })));
    }
    for m in &models {
        ctx.cfg.model_config(Some(m))?;
    }
    let batch = Batch {
        ctx,
        spec: ctx.corpus(CorpusRole::Specification)?,
        curated: ctx.corpus(CorpusRole::Curated)?,
        extended: if a.confirm_stage3 {
            Some(ctx.corpus(CorpusRole::Extended)?)
        } else {
            None
        },
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Value>>> = Mutex::new(vec![None; plan.len()]);
    let store = ctx.store();
    std::thread::scope(|scope| {
        for _ in 0..a.parallel.clamp(1, plan.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(r) = plan.get(i) else { break };
                tracing::info!(run_id = %r.run_id, "experiment run");
                let mut line = json!({"run_id": r.run_id, "model": r.model, "experiment": r.label});
                match batch.run_one(&r.run_id, &r.model, r.mode, &r.label) {
                    Ok(()) => {}
                    Err(e) if e.code == "AwaitingFeedback" => {}
                    Err(e) => line["error"] = json!({"code": e.code, "message": e.message}),
                }
                if let Ok(m) = store.load_manifest(&r.run_id) {
                    line["status"] = json!(m.status);
                    line["cursor"] = json!(m.cursor);
                }
                results.lock().unwrap()[i] = Some(line);
            });
        }
    });

    let runs: Vec<Value> = results.into_inner().unwrap().into_iter().flatten().collect();
    let count = |s: RunStatus| runs.iter().filter(|r| r["status"] == json!(s)).count();
    let failed = runs.iter().filter(|r| r.get("error").is_some()).count();
    let summary = json!({
        "ok": failed == 0,
        "command": "experiment",
        "scheduled": plan.len(),
        "completed": count(RunStatus::Completed),
        "awaiting_feedback": count(RunStatus::AwaitingFeedback),
        "failed": failed,
        "runs": runs,
    });
    if failed > 0 {
        println!("{summary}");
        return Err(CliError::failure(
            "ExperimentFailures",
            format!("{failed} of {} runs failed", plan.len()),
        ));
    }
    Ok(Output::Json(summary))
}
