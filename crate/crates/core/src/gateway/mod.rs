//! OpenAI-compatible chat completion client, schema extraction from model
//! replies, and the parse/repair retry loop.

mod extract;
mod http;
mod repair;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use extract::extract_schema_text;
pub use http::HttpChatClient;
pub use repair::{complete_schema_with_repair, repair_instruction, RepairOutcome};

use crate::prompt::PromptPair;
use crate::schema::SchemaError;

pub const DEFAULT_TEMPERATURE: f64 = 0.3;
pub const DEFAULT_CONTEXT_LIMIT: usize = 128_000;
pub const DEFAULT_COMPLETION_RESERVE: usize = 8_000;
pub const DEFAULT_MAX_REPAIR_ATTEMPTS: u32 = 3;

/// API key that never shows up in `Debug` output or serialized configs.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_empty() { "ApiKey(<unset>)" } else { "ApiKey(<redacted>)" })
    }
}

/// Transport retry schedule: `max_tries` total attempts, sleeping
/// `base_delay * factor^k` before retry `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_tries: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_tries: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub base_url: String,
    pub api_key: ApiKey,
    pub model_name: String,
    pub temperature: f64,
    pub context_limit: usize,
    pub completion_reserve: usize,
    pub max_repair_attempts: u32,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
    /// Send `options.num_ctx = context_limit`, which Ollama-style servers
    /// use to size the context window. Strict endpoints may reject it.
    pub send_num_ctx: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("max_repair_attempts must be at least 1")]
    RepairAttempts,
    #[error("context limit {context_limit} must exceed completion reserve {completion_reserve} > 0")]
    Budget {
        context_limit: usize,
        completion_reserve: usize,
    },
    #[error("base URL is empty")]
    BaseUrl,
    #[error("model name is empty")]
    ModelName,
}

impl ModelConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: ApiKey::default(),
            model_name: model_name.into(),
            temperature: DEFAULT_TEMPERATURE,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            completion_reserve: DEFAULT_COMPLETION_RESERVE,
            max_repair_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
            request_timeout: Duration::from_secs(300),
            retry: RetryPolicy::default(),
            send_num_ctx: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.max_repair_attempts == 0 {
            return Err(ConfigError::RepairAttempts);
        }
        if self.completion_reserve == 0 || self.context_limit <= self.completion_reserve {
            return Err(ConfigError::Budget {
                context_limit: self.context_limit,
                completion_reserve: self.completion_reserve,
            });
        }
        if self.base_url.trim().is_empty() {
            return Err(ConfigError::BaseUrl);
        }
        if self.model_name.trim().is_empty() {
            return Err(ConfigError::ModelName);
        }
        Ok(())
    }

    /// Hex SHA-256 of every setting that affects model output (not the key).
    pub fn digest(&self) -> String {
        let value = json!({
            "base_url": self.base_url,
            "model": self.model_name,
            "temperature": self.temperature,
            "context_limit": self.context_limit,
            "completion_reserve": self.completion_reserve,
            "max_repair_attempts": self.max_repair_attempts,
        });
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication rejected (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("endpoint unreachable after {attempts} attempts: {last_error}")]
    EndpointUnreachable { attempts: u32, last_error: String },
    #[error("response truncated by the token limit")]
    ResponseTruncated { partial: CompletionResult },
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("no JSON object found in the model reply")]
    NoJsonFound,
    #[error("schema still invalid after {} attempts: {last_error}", transcript.len())]
    RepairExhausted {
        last_error: SchemaError,
        transcript: Vec<CompletionResult>,
    },
}

impl GatewayError {
    /// Stable identifier for machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::AuthFailure { .. } => "AuthFailure",
            GatewayError::EndpointUnreachable { .. } => "EndpointUnreachable",
            GatewayError::ResponseTruncated { .. } => "ResponseTruncated",
            GatewayError::ProtocolError(_) => "ProtocolError",
            GatewayError::Rejected { .. } => "Rejected",
            GatewayError::NoJsonFound => "NoJsonFound",
            GatewayError::RepairExhausted { .. } => "RepairExhausted",
        }
    }
}

/// Anything that can answer a rendered prompt.
pub trait ChatModel: Send + Sync {
    fn complete(&self, prompt: &PromptPair) -> Result<CompletionResult, GatewayError>;
    fn config(&self) -> &ModelConfig;
}
