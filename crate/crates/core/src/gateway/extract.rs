use super::{CompletionResult, GatewayError};

/// Pulls the schema text out of a model reply.
///
/// If the reply contains a ``` fence, the body of the first fenced block is
/// returned (an unterminated fence runs to the end of the text). Otherwise
/// the span from the first `{` to its matching `}` is returned, with braces
/// inside JSON strings ignored; an unbalanced object runs to the end so the
/// parser can report where it broke.
pub fn extract_schema_text(result: &CompletionResult) -> Result<String, GatewayError> {
    let text = result.raw_text.as_str();
    if let Some(open) = text.find("```") {
        let after = &text[open + 3..];
        // skip the info string (e.g. `json`) up to the end of the line
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let body = match body.find("```") {
            Some(close) => &body[..close],
            None => body,
        };
        return Ok(body.trim().to_string());
    }

    let start = text.find('{').ok_or(GatewayError::NoJsonFound)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(text[start..start + offset + 1].to_string());
                }
            }
            _ => {}
        }
    }
    Ok(text[start..].trim_end().to_string())
}
