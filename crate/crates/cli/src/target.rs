//! Schema arguments: a file path, or `run_id/Stage/iteration` in the store.

use std::fs;
use std::path::{Path, PathBuf};

use schema_miner::pipeline::SnapshotStore;
use schema_miner::prompt::StageId;
use schema_miner::schema::{parse_schema, SchemaDoc};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    File(PathBuf),
    Snapshot { run_id: String, stage: StageId, iteration: u32 },
}

impl Target {
    /// Existing files win; otherwise a three-part `run/stage/iter` is a
    /// snapshot reference.
    pub fn parse(text: &str) -> Self {
        let path = Path::new(text);
        if !path.exists() {
            let parts: Vec<&str> = text.split('/').collect();
            if let [run, stage, iter] = parts[..] {
                if let (Ok(stage), Ok(iteration)) = (stage.parse::<StageId>(), iter.parse::<u32>()) {
                    return Target::Snapshot {
                        run_id: run.to_string(),
                        stage,
                        iteration,
                    };
                }
            }
        }
        Target::File(path.to_path_buf())
    }

    pub fn default_label(&self) -> String {
        match self {
            Target::Snapshot { run_id, .. } => run_id.clone(),
            Target::File(p) => {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                name.trim_end_matches(".json").trim_end_matches(".schema").to_string()
            }
        }
    }

    pub fn load(&self, store: &SnapshotStore) -> Result<SchemaDoc, CliError> {
        match self {
            Target::File(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                parse_schema(&text).map_err(|e| CliError::failure("InvalidSchema", format!("{}: {e}", path.display())))
            }
            Target::Snapshot {
                run_id,
                stage,
                iteration,
            } => store
                .load_snapshot(run_id, *stage, *iteration)
                .map_err(|e| CliError::from(e).with_run(run_id))?
                .map(|s| s.schema)
                .ok_or_else(|| {
                    CliError::usage("UnknownSnapshot", format!("no snapshot {run_id}/{stage}/{iteration}")).with_run(run_id)
                }),
        }
    }
}

/// `label=target` or a bare target.
pub fn labelled(text: &str) -> (String, Target) {
    if let Some((label, rest)) = text.split_once('=') {
        if !label.is_empty() && !label.contains('/') && !rest.is_empty() {
            return (label.to_string(), Target::parse(rest));
        }
    }
    let target = Target::parse(text);
    (target.default_label(), target)
}
