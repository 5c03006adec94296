use std::thread;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{ChatModel, CompletionResult, FinishReason, GatewayError, ModelConfig, Usage};
use crate::prompt::PromptPair;

/// Blocking client for `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    config: ModelConfig,
    http: Client,
}

enum Attempt {
    Done(Result<CompletionResult, GatewayError>),
    Transient(String),
}

impl HttpChatClient {
    pub fn new(config: ModelConfig) -> Result<Self, GatewayError> {
        let http = Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::ProtocolError(format!("building HTTP client: {e}")))?;
        Ok(Self { config, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// The exact JSON body sent for `prompt`.
    pub fn request_body(&self, prompt: &PromptPair) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.config.temperature,
            "stream": false,
        });
        if self.config.send_num_ctx {
            body["options"] = json!({ "num_ctx": self.config.context_limit });
        }
        body
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.http.post(self.endpoint()).json(body);
        if !self.config.api_key.is_empty() {
            req = req.bearer_auth(self.config.api_key.expose());
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Done(Err(GatewayError::AuthFailure { status: status.as_u16() }));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        if !status.is_success() {
            return Attempt::Done(Err(GatewayError::Rejected {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            }));
        }
        Attempt::Done(parse_response(&text))
    }
}

fn parse_response(text: &str) -> Result<CompletionResult, GatewayError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| GatewayError::ProtocolError(format!("response is not JSON: {e}")))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::ProtocolError("response has no choices[0]".into()))?;
    let content = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => return Err(GatewayError::ProtocolError(format!("message content is not a string: {other}"))),
    };
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Other,
    };
    let usage = value.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    let result = CompletionResult {
        raw_text: content,
        finish_reason,
        usage,
    };
    match result.finish_reason {
        FinishReason::Length => Err(GatewayError::ResponseTruncated { partial: result }),
        FinishReason::Stop if result.raw_text.is_empty() => {
            Err(GatewayError::ProtocolError("empty content with finish_reason stop".into()))
        }
        _ => Ok(result),
    }
}

impl ChatModel for HttpChatClient {
    fn complete(&self, prompt: &PromptPair) -> Result<CompletionResult, GatewayError> {
        let body = self.request_body(prompt);
        let tries = self.config.retry.max_tries.max(1);
        let mut last_error = String::new();
        for attempt in 1..=tries {
            if attempt > 1 {
                let delay = self.config.retry.delay(attempt - 1);
                tracing::warn!(attempt, ?delay, error = %last_error, "retrying chat completion");
                thread::sleep(delay);
            }
            match self.attempt(&body) {
                Attempt::Done(result) => return result,
                Attempt::Transient(err) => last_error = err,
            }
        }
        Err(GatewayError::EndpointUnreachable {
            attempts: tries,
            last_error,
        })
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }
}
