//! Settings from `.env`, the process environment and command-line flags,
//! in increasing order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use schema_miner::gateway::{ApiKey, ModelConfig, DEFAULT_CONTEXT_LIMIT, DEFAULT_TEMPERATURE};
use serde_json::{json, Value};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "LLM_API_KEY",
    "LLM_BASE_URL",
    "LLM_MODEL",
    "LLM_MODELS",
    "LLM_TEMPERATURE",
    "LLM_CONTEXT_TOKENS",
    "EMBED_BASE_URL",
    "EMBED_MODEL",
    "EMBED_API_KEY",
    "OLS_BASE_URL",
    "ONTOLOGY_ALLOWLIST",
    "DATA_DIR",
    "RUNS_DIR",
    "REVIEW_TOKEN",
];

/// Where a setting's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    DotEnv,
    Environment,
    Flag,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::DotEnv => "dotenv",
            Source::Environment => "environment",
            Source::Flag => "flag",
        }
    }
}

/// Resolved key/value settings with provenance.
#[derive(Debug, Clone, Default)]
pub struct EnvConfig {
    values: BTreeMap<String, (String, Source)>,
}

impl EnvConfig {
    /// Layers the three sources; later layers win. Blank values are ignored.
    pub fn layered(
        dotenv: impl IntoIterator<Item = (String, String)>,
        environment: impl IntoIterator<Item = (String, String)>,
        flags: impl IntoIterator<Item = (&'static str, Option<String>)>,
    ) -> Self {
        let mut values = BTreeMap::new();
        let mut put = |k: String, v: String, src: Source| {
            if KEYS.contains(&k.as_str()) && !v.trim().is_empty() {
                values.insert(k, (v, src));
            }
        };
        for (k, v) in dotenv {
            put(k, v, Source::DotEnv);
        }
        for (k, v) in environment {
            put(k, v, Source::Environment);
        }
        for (k, v) in flags {
            if let Some(v) = v {
                put(k.to_string(), v, Source::Flag);
            }
        }
        Self { values }
    }

    pub fn load(env_file: &Path, flags: impl IntoIterator<Item = (&'static str, Option<String>)>) -> Result<Self, CliError> {
        let dotenv: Vec<(String, String)> = match dotenvy::from_path_iter(env_file) {
            Ok(iter) => iter
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::usage("BadEnvFile", format!("{}: {e}", env_file.display())))?,
            Err(e) if e.not_found() => Vec::new(),
            Err(e) => return Err(CliError::usage("BadEnvFile", format!("{}: {e}", env_file.display()))),
        };
        Ok(Self::layered(dotenv, std::env::vars(), flags))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::usage("MissingConfig", format!("{key} is not set (.env, environment or flag)")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|e| CliError::usage("BadConfig", format!("{key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.get("DATA_DIR").unwrap_or("data"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        PathBuf::from(self.get("RUNS_DIR").unwrap_or("runs"))
    }

    /// Model list for experiment batches: LLM_MODELS, else LLM_MODEL.
    pub fn models(&self) -> Vec<String> {
        self.get("LLM_MODELS")
            .or(self.get("LLM_MODEL"))
            .map(|v| v.split(',').map(str::trim).filter(|m| !m.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    /// Chat model settings; `model` overrides LLM_MODEL.
    pub fn model_config(&self, model: Option<&str>) -> Result<ModelConfig, CliError> {
        let base = self.require("LLM_BASE_URL")?;
        let name = match model {
            Some(m) => m,
            None => self.require("LLM_MODEL")?,
        };
        let mut cfg = ModelConfig::new(base, name);
        cfg.api_key = ApiKey::new(self.get("LLM_API_KEY").unwrap_or(""));
        cfg.temperature = self.parsed("LLM_TEMPERATURE")?.unwrap_or(DEFAULT_TEMPERATURE);
        cfg.context_limit = self.parsed("LLM_CONTEXT_TOKENS")?.unwrap_or(DEFAULT_CONTEXT_LIMIT);
        cfg.validate().map_err(|e| CliError::usage("BadConfig", e.to_string()))?;
        Ok(cfg)
    }

    pub fn embed_settings(&self) -> Option<(String, String, ApiKey)> {
        let base = self.get("EMBED_BASE_URL")?;
        let model = self.get("EMBED_MODEL").unwrap_or("embedding");
        let key = self.get("EMBED_API_KEY").or(self.get("LLM_API_KEY")).unwrap_or("");
        Some((base.to_string(), model.to_string(), ApiKey::new(key)))
    }

    /// Every resolved setting with its source; secrets are masked.
    pub fn describe(&self) -> Value {
        let mut out = serde_json::Map::new();
        for (k, (v, src)) in &self.values {
            let shown = if k.ends_with("_KEY") || k.ends_with("_TOKEN") {
                "***".to_string()
            } else {
                v.clone()
            };
            out.insert(k.clone(), json!({"value": shown, "source": src.as_str()}));
        }
        Value::Object(out)
    }
}

pub const SAMPLE_ENV: &str = "\
# schema-miner settings. Process environment and flags override these.
LLM_BASE_URL=http://localhost:11434/v1
LLM_MODEL=llama3.1:8b
# LLM_MODELS=llama3.1:8b,gpt-4o,mistral-large
LLM_API_KEY=
LLM_TEMPERATURE=0.3
LLM_CONTEXT_TOKENS=128000
EMBED_BASE_URL=http://localhost:11434/v1
EMBED_MODEL=nomic-embed-text
OLS_BASE_URL=https://www.ebi.ac.uk/ols4/api
ONTOLOGY_ALLOWLIST=data/ontologies.txt
DATA_DIR=data
RUNS_DIR=runs
";
