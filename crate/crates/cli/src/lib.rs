//! The `schema-miner` command line: config layering, subcommands and the
//! one-line JSON result/error protocol.

mod commands;
pub mod config;
mod target;

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use schema_miner::corpus::CorpusError;
use schema_miner::embed::EmbedError;
use schema_miner::gateway::GatewayError;
use schema_miner::grounding::GroundingError;
use schema_miner::pipeline::PipelineError;
use schema_miner_service::ServiceError;
use serde_json::{json, Value};

pub use commands::Cli;

/// A failed command. Usage and configuration problems exit with 2, run
/// failures with 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub run_id: Option<String>,
    exit: i32,
}

impl CliError {
    pub fn usage(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            run_id: None,
            exit: 2,
        }
    }

    pub fn failure(code: &str, message: impl Into<String>) -> Self {
        Self {
            exit: 1,
            ..Self::usage(code, message)
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::failure("Io", format!("{}: {e}", path.display()))
    }

    pub fn with_run(mut self, run_id: &str) -> Self {
        self.run_id.get_or_insert_with(|| run_id.to_string());
        self
    }

    pub fn exit_code(&self) -> i32 {
        self.exit
    }

    pub fn to_json(&self) -> Value {
        let mut err = json!({"code": self.code, "message": self.message});
        if let Some(run) = &self.run_id {
            err["run_id"] = json!(run);
        }
        json!({ "error": err })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let run_id = match &e {
            PipelineError::UnknownRun(id) | PipelineError::RunExists(id) | PipelineError::InvalidRunId(id) => {
                Some(id.clone())
            }
            PipelineError::NoPendingTicket { run_id } => Some(run_id.clone()),
            PipelineError::AwaitingFeedback { ticket } => Some(ticket.run_id.clone()),
            _ => None,
        };
        let mut err = match e {
            PipelineError::UnknownRun(_) | PipelineError::InvalidRunId(_) => Self::usage(e.code(), e.to_string()),
            _ => Self::failure(e.code(), e.to_string()),
        };
        err.run_id = run_id;
        err
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        Self::failure(e.code(), e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        Self::failure(e.code(), e.to_string())
    }
}

impl From<GroundingError> for CliError {
    fn from(e: GroundingError) -> Self {
        Self::failure(e.code(), e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        Self::failure(e.code(), e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::TokenRequired(_) => Self::usage(e.code(), e.to_string()),
            _ => Self::failure(e.code(), e.to_string()),
        }
    }
}

/// What a successful command prints on stdout.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// A single JSON line.
    Json(Value),
    /// Human-oriented text, printed as is.
    Text(String),
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let first = e.to_string();
                    let first = first.lines().next().unwrap_or("invalid arguments");
                    let first = first.trim_start_matches("error: ").to_string();
                    eprintln!("{}", CliError::usage("Usage", format!("{first} (see --help)")).to_json());
                    2
                }
            };
        }
    };
    init_logging(cli.verbose());
    match commands::dispatch(cli) {
        Ok(Output::Json(v)) => {
            println!("{v}");
            0
        }
        Ok(Output::Text(t)) => {
            print!("{t}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
