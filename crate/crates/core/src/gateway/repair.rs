use super::{extract_schema_text, ChatModel, CompletionResult, GatewayError};
use crate::prompt::PromptPair;
use crate::schema::{parse_schema, SchemaDoc, SchemaError, TextPosition};
use crate::text::TokenEstimator;

/// Longest slice of a bad reply quoted back to the model.
const MAX_QUOTED_CHARS: usize = 4_000;

#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub schema: SchemaDoc,
    pub attempts: u32,
    pub transcript: Vec<CompletionResult>,
}

/// Text appended to the original user prompt after a failed parse.
pub fn repair_instruction(error: &SchemaError, offending: &str) -> String {
    let quoted: String = offending.chars().take(MAX_QUOTED_CHARS).collect();
    format!(
        "\n\nYour previous output failed to parse: {error}. Output only a corrected JSON schema.\n\n\
         Previous output:\n```\n{quoted}\n```"
    )
}

/// Asks `model` for a schema, re-prompting with the parse error until one
/// parses or `max_repair_attempts` calls have been made.
///
/// Transport failures and truncated replies end the loop immediately; only
/// unparseable content is repaired. Each repair turn is appended to the
/// original prompt, never to a previous repair turn.
pub fn complete_schema_with_repair(
    model: &dyn ChatModel,
    prompt: &PromptPair,
    estimator: &dyn TokenEstimator,
) -> Result<RepairOutcome, GatewayError> {
    let max_attempts = model.config().max_repair_attempts.max(1);
    let mut transcript = Vec::new();
    let mut current = prompt.clone();
    loop {
        let result = model.complete(&current)?;
        transcript.push(result.clone());
        let attempts = transcript.len() as u32;

        let (error, offending) = match extract_schema_text(&result) {
            Ok(text) => match parse_schema(&text) {
                Ok(schema) => {
                    return Ok(RepairOutcome {
                        schema,
                        attempts,
                        transcript,
                    })
                }
                Err(e) => (e, text),
            },
            Err(_) => (
                SchemaError::MalformedJson {
                    position: TextPosition { line: 1, column: 1 },
                    message: "no JSON object found in the reply".into(),
                },
                result.raw_text.clone(),
            ),
        };
        tracing::warn!(attempts, %error, "model output failed to parse");
        if attempts >= max_attempts {
            return Err(GatewayError::RepairExhausted {
                last_error: error,
                transcript,
            });
        }
        current = prompt.with_user_suffix(&repair_instruction(&error, &offending), estimator);
    }
}
