mod admin;
mod analysis;
mod runs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use schema_miner::corpus::{load_corpus, Corpus, CorpusRole};
use schema_miner::feedback::{FeedbackCadence, FeedbackChannel, FeedbackMode};
use schema_miner::gateway::{ApiKey, ChatModel, HttpChatClient, ModelConfig};
use schema_miner::grounding::ResourceKind;
use schema_miner::pipeline::{Pipeline, RunManifest, SnapshotStore};
use schema_miner::prompt::{PromptEngine, TemplateSet};
use schema_miner::text::CharEstimator;
use schema_miner_service::DEFAULT_BIND;

use crate::config::EnvConfig;
use crate::{CliError, Output};

#[derive(Debug, Parser)]
#[command(name = "schema-miner", version, about = "Mine a JSON schema from papers with an LLM and expert review")]
pub struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    pub fn verbose(&self) -> u8 {
        self.global.verbose
    }
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Settings file; the process environment and flags override it.
    #[arg(long, global = true, default_value = ".env")]
    env_file: PathBuf,
    #[arg(long, global = true, value_name = "URL")]
    base_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Comma-separated models for `experiment --matrix`.
    #[arg(long, global = true)]
    models: Option<String>,
    #[arg(long, global = true)]
    temperature: Option<String>,
    #[arg(long, global = true, value_name = "TOKENS")]
    context_tokens: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    embed_base_url: Option<String>,
    #[arg(long, global = true)]
    embed_model: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    ols_base_url: Option<String>,
    /// Ontology allow-list file.
    #[arg(long, global = true, value_name = "PATH")]
    allowlist: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    runs_dir: Option<String>,
    /// Print the plan; no network calls, no writes.
    #[arg(long, global = true)]
    dry_run: bool,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

impl GlobalArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("LLM_BASE_URL", self.base_url.clone()),
            ("LLM_MODEL", self.model.clone()),
            ("LLM_MODELS", self.models.clone()),
            ("LLM_TEMPERATURE", self.temperature.clone()),
            ("LLM_CONTEXT_TOKENS", self.context_tokens.clone()),
            ("EMBED_BASE_URL", self.embed_base_url.clone()),
            ("EMBED_MODEL", self.embed_model.clone()),
            ("OLS_BASE_URL", self.ols_base_url.clone()),
            ("ONTOLOGY_ALLOWLIST", self.allowlist.clone()),
            ("DATA_DIR", self.data_dir.clone()),
            ("RUNS_DIR", self.runs_dir.clone()),
        ]
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scaffold data directories, prompt templates, a sample .env and allow-list.
    Init(admin::InitArgs),
    /// Convert PDFs in a corpus directory to text.
    Convert(admin::ConvertArgs),
    /// Generate the initial schema from the specification document.
    Stage1(RunArgs),
    /// Refine over the curated papers (runs Stage 1 first for a new run).
    Stage2(Stage2Args),
    /// Finalize over the extended corpus.
    Stage3(Stage3Args),
    /// Continue a run from its cursor.
    Resume(ResumeArgs),
    /// Run every feedback mode for every configured model.
    Experiment(runs::ExperimentArgs),
    /// Link schema properties to ontology terms.
    Ground(analysis::GroundArgs),
    /// Pairwise similarity of schemas.
    Compare(analysis::CompareArgs),
    /// Serve the review API (and the built UI, if given).
    Serve(admin::ServeArgs),
    /// Answer or inspect review tickets.
    Feedback {
        #[command(subcommand)]
        action: admin::FeedbackCommand,
    },
    /// Show one run, or list all runs.
    Status {
        run_id: Option<String>,
    },
    /// Print resolved settings with their sources (secrets masked).
    Config,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Defaults to a fresh `run-xxxxxxxx` id.
    #[arg(long)]
    run_id: Option<String>,
    /// descriptive, edited, combined or none.
    #[arg(long)]
    feedback_mode: Option<FeedbackChannel>,
    /// first, every or never; defaults to every (never for `none`).
    #[arg(long)]
    cadence: Option<FeedbackCadence>,
}

#[derive(Debug, Args)]
struct GateArgs {
    /// Do not wait at review gates; leave the run awaiting feedback.
    #[arg(long)]
    park: bool,
    /// Park after waiting this many seconds.
    #[arg(long, value_name = "SECS")]
    wait_timeout: Option<f64>,
    #[arg(long, default_value_t = 500, value_name = "MS")]
    poll_ms: u64,
    /// Also serve the review API while waiting.
    #[arg(long)]
    serve: bool,
    #[arg(long, default_value = DEFAULT_BIND)]
    bind: SocketAddr,
}

#[derive(Debug, Args)]
struct Stage2Args {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    gate: GateArgs,
}

#[derive(Debug, Args)]
struct Stage3Args {
    #[arg(long)]
    run_id: String,
    /// Required: moving into Stage 3 is an explicit decision.
    #[arg(long)]
    confirm: bool,
    #[command(flatten)]
    gate: GateArgs,
}

#[derive(Debug, Args)]
struct ResumeArgs {
    run_id: String,
    #[command(flatten)]
    gate: GateArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// Resolved settings shared by every command.
struct Ctx {
    cfg: EnvConfig,
    env_file: PathBuf,
    dry_run: bool,
}

impl Ctx {
    fn store(&self) -> SnapshotStore {
        SnapshotStore::new(self.cfg.runs_dir())
    }

    fn templates_dir(&self) -> PathBuf {
        self.cfg.data_dir().join("templates")
    }

    fn engine(&self) -> Result<PromptEngine, CliError> {
        let templates = TemplateSet::load_dir(&self.templates_dir()).map_err(|e| CliError::usage("BadTemplate", e.to_string()))?;
        Ok(PromptEngine::new(templates))
    }

    fn corpus_dir(&self, role: CorpusRole) -> PathBuf {
        self.cfg.data_dir().join(role.default_dir())
    }

    fn corpus(&self, role: CorpusRole) -> Result<Corpus, CliError> {
        Ok(load_corpus(&self.corpus_dir(role), role, &CharEstimator)?)
    }

    fn pipeline(&self, model: ModelConfig) -> Result<Pipeline, CliError> {
        let client: Arc<dyn ChatModel> = Arc::new(HttpChatClient::new(model)?);
        Ok(Pipeline::new(self.store(), self.engine()?, client))
    }

    /// Model settings recorded in a run, with the key from the environment.
    fn model_for_run(&self, manifest: &RunManifest) -> ModelConfig {
        let m = &manifest.model;
        let mut cfg = ModelConfig::new(&m.base_url, &m.name);
        cfg.temperature = m.temperature;
        cfg.context_limit = m.context_limit;
        cfg.completion_reserve = m.completion_reserve;
        cfg.max_repair_attempts = m.max_repair_attempts;
        cfg.api_key = ApiKey::new(self.cfg.get("LLM_API_KEY").unwrap_or(""));
        cfg
    }
}

/// `--feedback-mode` and `--cadence` into a mode, if either was given.
fn resolve_mode(
    channel: Option<FeedbackChannel>,
    cadence: Option<FeedbackCadence>,
) -> Result<Option<FeedbackMode>, CliError> {
    let channel = match (channel, cadence) {
        (None, None) => return Ok(None),
        (Some(c), _) => c,
        (None, Some(FeedbackCadence::Never)) => FeedbackChannel::None,
        (None, Some(_)) => return Err(CliError::usage("BadFeedbackMode", "--cadence needs --feedback-mode")),
    };
    let cadence = cadence.unwrap_or(if channel == FeedbackChannel::None {
        FeedbackCadence::Never
    } else {
        FeedbackCadence::EveryIteration
    });
    FeedbackMode::new(channel, cadence)
        .map(Some)
        .map_err(|e| CliError::usage("BadFeedbackMode", e.to_string()))
}

fn dedup_kinds(kinds: &[ResourceKind]) -> Vec<ResourceKind> {
    let mut out = Vec::new();
    for k in kinds {
        if !out.contains(k) {
            out.push(*k);
        }
    }
    out
}

pub(crate) fn dispatch(cli: Cli) -> Result<Output, CliError> {
    let cfg = EnvConfig::load(&cli.global.env_file, cli.global.flags())?;
    let ctx = Ctx {
        cfg,
        env_file: cli.global.env_file.clone(),
        dry_run: cli.global.dry_run,
    };
    match cli.command {
        Command::Init(a) => admin::init(&ctx, a),
        Command::Convert(a) => admin::convert(&ctx, a),
        Command::Stage1(a) => runs::stage1(&ctx, a),
        Command::Stage2(a) => runs::stage2(&ctx, a),
        Command::Stage3(a) => runs::stage3(&ctx, a),
        Command::Resume(a) => runs::resume(&ctx, a),
        Command::Experiment(a) => runs::experiment(&ctx, a),
        Command::Ground(a) => analysis::ground(&ctx, a),
        Command::Compare(a) => analysis::compare(&ctx, a),
        Command::Serve(a) => admin::serve(&ctx, a),
        Command::Feedback { action } => admin::feedback(&ctx, action),
        Command::Status { run_id } => admin::status(&ctx, run_id),
        Command::Config => Ok(Output::Json(serde_json::json!({
            "ok": true,
            "command": "config",
            "env_file": ctx.env_file,
            "settings": ctx.cfg.describe(),
        }))),
    }
}
