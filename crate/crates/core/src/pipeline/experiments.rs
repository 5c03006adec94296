use serde::Serialize;

use crate::feedback::{enumerate_experiments, FeedbackMode};

/// One cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExperimentRun {
    pub run_id: String,
    pub model: String,
    pub label: String,
    pub mode: FeedbackMode,
}

fn slug(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches(|c| c == '-' || c == '.').to_string()
}

/// Every feedback mode crossed with every model, model-major, modes in
/// experiment order. Run ids are `{prefix}-{model}-exp{label}`.
pub fn plan_experiments(prefix: &str, models: &[String]) -> Vec<ExperimentRun> {
    let modes = enumerate_experiments();
    models
        .iter()
        .flat_map(|model| {
            modes.iter().map(move |mode| {
                let label = mode.experiment_label();
                ExperimentRun {
                    run_id: format!("{}-{}-exp{}", slug(prefix), slug(model), label),
                    model: model.clone(),
                    label,
                    mode: *mode,
                }
            })
        })
        .collect()
}
