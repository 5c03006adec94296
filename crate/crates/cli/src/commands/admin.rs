use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use schema_miner::corpus::{convert_pdfs, CorpusRole};
use schema_miner::pipeline::{Clock, FeedbackSubmission, RunManifest, SystemClock};
use schema_miner::prompt::{StageId, TemplateSet};
use schema_miner_service::{ServiceConfig, DEFAULT_BIND};
use serde_json::{json, Value};

use super::Ctx;
use crate::config::SAMPLE_ENV;
use crate::{CliError, Output};

const SAMPLE_ALLOWLIST: &str = "\
# Ontology ids searched during grounding, one per line.
chmo
chebi
pato
uo
";

#[derive(Debug, Args)]
pub(super) struct InitArgs {
    /// Overwrite an existing .env and allow-list.
    #[arg(long)]
    force: bool,
}

pub(super) fn init(ctx: &Ctx, a: InitArgs) -> Result<Output, CliError> {
    let data = ctx.cfg.data_dir();
    let mut dirs: Vec<PathBuf> = CorpusRole::ALL.iter().map(|r| ctx.corpus_dir(*r)).collect();
    dirs.push(ctx.templates_dir());
    dirs.push(ctx.cfg.runs_dir());
    let files = [
        (ctx.env_file.clone(), SAMPLE_ENV),
        (data.join("ontologies.txt"), SAMPLE_ALLOWLIST),
    ];

    if ctx.dry_run {
        return Ok(Output::Json(json!({
            "ok": true,
            "dry_run": true,
            "command": "init",
            "dirs": dirs,
            "files": files.iter().map(|(p, _)| p).collect::<Vec<_>>(),
            "templates": ctx.templates_dir(),
        })));
    }

    let mut created = Vec::new();
    for d in &dirs {
        if !d.is_dir() {
            fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
            created.push(d.clone());
        }
    }
    let templates = TemplateSet::write_defaults(&ctx.templates_dir()).map_err(|e| CliError::io(&ctx.templates_dir(), e))?;
    created.extend(templates);
    let mut skipped = Vec::new();
    for (path, text) in files {
        if path.exists() && !a.force {
            skipped.push(path);
            continue;
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        created.push(path);
    }
    Ok(Output::Json(json!({"ok": true, "command": "init", "created": created, "skipped": skipped})))
}

#[derive(Debug, Args)]
pub(super) struct ConvertArgs {
    /// specification, curated or extended; all roles when omitted.
    #[arg(long)]
    role: Option<CorpusRole>,
    /// Converter with {input} and {output} placeholders.
    #[arg(long, default_value = "pdftotext -layout {input} {output}")]
    command: String,
}

fn pending_pdfs(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pdf") && !p.with_extension("txt").exists())
        .collect();
    out.sort();
    out
}

pub(super) fn convert(ctx: &Ctx, a: ConvertArgs) -> Result<Output, CliError> {
    let roles: Vec<CorpusRole> = match a.role {
        Some(r) => vec![r],
        None => CorpusRole::ALL.to_vec(),
    };
    let mut report = serde_json::Map::new();
    for role in roles {
        let dir = ctx.corpus_dir(role);
        let entry = if ctx.dry_run {
            json!({"dir": dir, "pending": pending_pdfs(&dir)})
        } else if !dir.is_dir() {
            json!({"dir": dir, "converted": 0, "missing": true})
        } else {
            json!({"dir": dir, "converted": convert_pdfs(&dir, &a.command)?})
        };
        report.insert(role.as_str().into(), entry);
    }
    Ok(Output::Json(json!({
        "ok": true,
        "dry_run": ctx.dry_run,
        "command": "convert",
        "converter": a.command,
        "roles": report,
    })))
}

#[derive(Debug, Args)]
pub(super) struct ServeArgs {
    #[arg(long, default_value = DEFAULT_BIND)]
    bind: SocketAddr,
    /// Bearer token for mutating requests; REVIEW_TOKEN by default.
    #[arg(long)]
    token: Option<String>,
    /// Built review UI to mount at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

pub(super) fn serve(ctx: &Ctx, a: ServeArgs) -> Result<Output, CliError> {
    let cfg = ServiceConfig {
        bind: a.bind,
        token: a.token.or_else(|| ctx.cfg.get("REVIEW_TOKEN").map(String::from)),
        ui_dir: a.ui_dir,
    };
    if ctx.dry_run {
        return Ok(Output::Json(json!({
            "ok": true,
            "dry_run": true,
            "command": "serve",
            "bind": cfg.bind,
            "token": cfg.token.is_some(),
            "ui_dir": cfg.ui_dir,
            "runs_dir": ctx.cfg.runs_dir(),
        })));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::failure("ServiceIo", e.to_string()))?;
    eprintln!("review service on http://{} (Ctrl-C to stop)", cfg.bind);
    let store = ctx.store();
    rt.block_on(schema_miner_service::serve(cfg, store, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(Output::Json(json!({"ok": true, "command": "serve", "stopped": true})))
}

#[derive(Debug, Subcommand)]
pub(super) enum FeedbackCommand {
    /// Answer the pending review ticket of a run.
    Submit(SubmitArgs),
    /// Print the pending review ticket of a run.
    Show {
        #[arg(long)]
        run_id: String,
    },
}

#[derive(Debug, Args)]
pub(super) struct SubmitArgs {
    #[arg(long)]
    run_id: String,
    /// JSON with `descriptive` and/or `edited_schema`; stage and iteration
    /// default to the pending ticket.
    #[arg(long, required_unless_present_any = ["descriptive", "edited"])]
    file: Option<PathBuf>,
    /// Descriptive feedback text.
    #[arg(long, conflicts_with = "file")]
    descriptive: Option<String>,
    /// Edited schema file.
    #[arg(long, conflicts_with = "file")]
    edited: Option<PathBuf>,
    #[arg(long)]
    stage: Option<StageId>,
    #[arg(long)]
    iteration: Option<u32>,
    #[arg(long)]
    author: Option<String>,
}

fn read_json_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::usage(
            "InvalidFeedback",
            format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()),
        )
    })
}

pub(super) fn feedback(ctx: &Ctx, cmd: FeedbackCommand) -> Result<Output, CliError> {
    let store = ctx.store();
    match cmd {
        FeedbackCommand::Show { run_id } => {
            let ticket = store.pending_ticket(&run_id).map_err(|e| CliError::from(e).with_run(&run_id))?;
            Ok(Output::Json(json!({
                "ok": true,
                "command": "feedback show",
                "run_id": run_id,
                "ticket_path": ticket.as_ref().map(|_| store.pending_path(&run_id)),
                "ticket": ticket,
            })))
        }
        FeedbackCommand::Submit(a) => {
            let run_id = a.run_id.as_str();
            let with_run = |e: CliError| e.with_run(run_id);
            let mut body = match &a.file {
                Some(path) => read_json_file(path).map_err(with_run)?,
                None => {
                    let edited = match &a.edited {
                        Some(p) => {
                            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                            Value::String(text)
                        }
                        None => Value::Null,
                    };
                    json!({"descriptive": a.descriptive, "edited_schema": edited})
                }
            };
            if !body.is_object() {
                return Err(with_run(CliError::usage("InvalidFeedback", "feedback must be a JSON object")));
            }
            let ticket = store.pending_ticket(run_id).map_err(|e| CliError::from(e).with_run(run_id))?;
            if let Some(s) = a.stage {
                body["stage"] = json!(s);
            }
            if let Some(i) = a.iteration {
                body["iteration"] = json!(i);
            }
            if let Some(author) = a.author {
                body["author"] = json!(author);
            }
            if let Some(t) = &ticket {
                if body.get("stage").is_none() {
                    body["stage"] = json!(t.stage);
                }
                if body.get("iteration").is_none() {
                    body["iteration"] = json!(t.iteration);
                }
            }
            if body.get("stage").is_none() || body.get("iteration").is_none() {
                return Err(CliError::from(schema_miner::pipeline::PipelineError::NoPendingTicket {
                    run_id: run_id.to_string(),
                }));
            }
            let submission: FeedbackSubmission = serde_json::from_value(body)
                .map_err(|e| with_run(CliError::usage("InvalidFeedback", e.to_string())))?;
            let (stage, iteration, fb) = submission
                .into_feedback(SystemClock.now())
                .map_err(|e| CliError::from(e).with_run(run_id))?;
            if ctx.dry_run {
                let manifest = store.load_manifest(run_id)?;
                manifest
                    .feedback_mode
                    .check(&fb)
                    .map_err(|e| CliError::failure("FeedbackChannelMismatch", e.to_string()).with_run(run_id))?;
                return Ok(Output::Json(json!({
                    "ok": true,
                    "dry_run": true,
                    "command": "feedback submit",
                    "run_id": run_id,
                    "stage": stage,
                    "iteration": iteration,
                    "pending": ticket.map(|t| (t.stage, t.iteration) == (stage, iteration)),
                    "descriptive": fb.descriptive.is_some(),
                    "edited_schema": fb.edited_schema.is_some(),
                })));
            }
            store
                .submit_feedback(run_id, stage, iteration, &fb)
                .map_err(|e| CliError::from(e).with_run(run_id))?;
            Ok(Output::Json(json!({
                "ok": true,
                "command": "feedback submit",
                "accepted": true,
                "run_id": run_id,
                "stage": stage,
                "iteration": iteration,
                "feedback": store.feedback_path(run_id, stage, iteration),
            })))
        }
    }
}

fn summary(m: &RunManifest) -> Value {
    json!({
        "run_id": m.run_id,
        "experiment": m.experiment,
        "model": m.model.name,
        "feedback_mode": m.feedback_mode,
        "status": m.status,
        "cursor": m.cursor,
        "target_stage": m.target_stage,
        "error": m.error,
    })
}

pub(super) fn status(ctx: &Ctx, run_id: Option<String>) -> Result<Output, CliError> {
    let store = ctx.store();
    Ok(Output::Json(match run_id {
        Some(id) => {
            let m = store.load_manifest(&id)?;
            let pending = store.pending_ticket(&id)?.map(|t| json!({"stage": t.stage, "iteration": t.iteration}));
            json!({"ok": true, "command": "status", "run": m, "pending_review": pending})
        }
        None => {
            let runs: Vec<Value> = store.list_runs()?.iter().map(summary).collect();
            json!({"ok": true, "command": "status", "runs": runs})
        }
    }))
}
