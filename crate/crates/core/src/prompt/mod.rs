//! Stage prompt rendering and context-budget fitting.
//!
//! Every stage prompt is a system prompt made of four labelled sections
//! (role, task, input format, output format) plus a user prompt produced by
//! filling the stage's layout slots. [`PromptEngine::fit_to_budget`] shrinks
//! only the paper text, from the tail, when a prompt is too large.

mod templates;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

pub use templates::{Slot, StageId, StageTemplate, TemplateError, TemplateSet, SECTION_LABELS};

use crate::feedback::Feedback;
use crate::schema::{serialize_canonical, SchemaDoc};
use crate::text::{CharEstimator, TokenEstimator};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("empty input for {0}")]
    EmptyInput(&'static str),
    #[error("invalid budget: context limit {context_limit} must exceed completion reserve {completion_reserve} > 0")]
    InvalidBudget {
        context_limit: usize,
        completion_reserve: usize,
    },
    #[error("prompt needs {needed} tokens even after truncating the paper; budget is {budget}")]
    BudgetImpossible { needed: usize, budget: usize },
}

/// Record of a paper truncation performed by [`PromptEngine::fit_to_budget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    pub kept_paragraphs: usize,
    pub total_paragraphs: usize,
}

/// A rendered system + user prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub stage: StageId,
    pub system: String,
    pub user: String,
    pub est_tokens: usize,
    pub truncation: Option<Truncation>,
    layout: String,
    slots: BTreeMap<Slot, String>,
    suffix: String,
}

impl PromptPair {
    /// Raw content placed in a slot, before any layout text.
    pub fn slot(&self, slot: Slot) -> Option<&str> {
        self.slots.get(&slot).map(String::as_str)
    }

    /// A copy whose user prompt has `extra` appended, as the repair loop does.
    pub fn with_user_suffix(&self, extra: &str, estimator: &dyn TokenEstimator) -> PromptPair {
        let mut out = self.clone();
        out.suffix = extra.to_string();
        out.user = fill_layout(&out.layout, &out.slots, &out.suffix);
        out.est_tokens = estimator.estimate(&out.system) + estimator.estimate(&out.user);
        out
    }
}

/// Renders prompts from a [`TemplateSet`] with a pluggable token estimator.
#[derive(Clone)]
pub struct PromptEngine {
    templates: TemplateSet,
    estimator: Arc<dyn TokenEstimator>,
}

impl std::fmt::Debug for PromptEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PromptEngine").field("templates", &self.templates).finish_non_exhaustive()
    }
}

impl PromptEngine {
    pub fn new(templates: TemplateSet) -> Self {
        Self {
            templates,
            estimator: Arc::new(CharEstimator),
        }
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn estimator(&self) -> &dyn TokenEstimator {
        self.estimator.as_ref()
    }

    pub fn render_generate(&self, spec_doc: &str) -> Result<PromptPair, PromptError> {
        if spec_doc.trim().is_empty() {
            return Err(PromptError::EmptyInput("DomainSpecification"));
        }
        let slots = BTreeMap::from([(Slot::DomainSpecification, spec_doc.to_string())]);
        Ok(self.assemble(StageId::Generate, slots))
    }

    pub fn render_refine(
        &self,
        prev: &SchemaDoc,
        paper: &str,
        feedback: Option<&Feedback>,
    ) -> Result<PromptPair, PromptError> {
        self.render_iteration(StageId::Refine, prev, paper, feedback)
    }

    pub fn render_finalize(
        &self,
        prev: &SchemaDoc,
        paper: &str,
        feedback: Option<&Feedback>,
    ) -> Result<PromptPair, PromptError> {
        self.render_iteration(StageId::Finalize, prev, paper, feedback)
    }

    /// Renders a Refine or Finalize prompt.
    pub fn render_iteration(
        &self,
        stage: StageId,
        prev: &SchemaDoc,
        paper: &str,
        feedback: Option<&Feedback>,
    ) -> Result<PromptPair, PromptError> {
        assert!(stage != StageId::Generate, "iteration prompts are for Refine/Finalize");
        if paper.trim().is_empty() {
            return Err(PromptError::EmptyInput("SciPaper"));
        }
        let mut slots = BTreeMap::new();
        slots.insert(Slot::PrevSchema, fenced_json(&serialize_canonical(prev)));
        slots.insert(Slot::SciPaper, paper.to_string());
        if let Some(feedback) = feedback {
            slots.insert(Slot::ExpertFeedback, feedback_section(feedback));
        }
        Ok(self.assemble(stage, slots))
    }

    fn assemble(&self, stage: StageId, slots: BTreeMap<Slot, String>) -> PromptPair {
        let template = self.templates.get(stage);
        let system = system_prompt(template);
        let layout = template.user_layout.clone();
        let user = fill_layout(&layout, &slots, "");
        let est_tokens = self.estimator.estimate(&system) + self.estimator.estimate(&user);
        PromptPair {
            stage,
            system,
            user,
            est_tokens,
            truncation: None,
            layout,
            slots,
            suffix: String::new(),
        }
    }

    /// Makes `prompt` fit in `context_limit - completion_reserve` tokens.
    ///
    /// Only the paper slot shrinks: whole paragraphs are dropped from its
    /// tail, keeping as many as fit, and a notice line records how many were
    /// removed. Prompts that already fit are returned unchanged.
    pub fn fit_to_budget(
        &self,
        prompt: &PromptPair,
        context_limit: usize,
        completion_reserve: usize,
    ) -> Result<PromptPair, PromptError> {
        if completion_reserve == 0 || context_limit <= completion_reserve {
            return Err(PromptError::InvalidBudget {
                context_limit,
                completion_reserve,
            });
        }
        let budget = context_limit - completion_reserve;
        if prompt.est_tokens <= budget {
            return Ok(prompt.clone());
        }
        let Some(paper) = prompt.slots.get(&Slot::SciPaper) else {
            return Err(PromptError::BudgetImpossible {
                needed: prompt.est_tokens,
                budget,
            });
        };

        let paragraphs = split_paragraphs(paper);
        let total = paragraphs.len();
        let candidate = |kept: usize| -> PromptPair {
            let mut text = paragraphs[..kept].join("\n\n");
            text.push_str(&format!(
                "\n\n[Truncated: {} of {} paragraphs omitted to fit the context budget.]",
                total - kept,
                total
            ));
            let mut out = prompt.clone();
            out.slots.insert(Slot::SciPaper, text);
            out.user = fill_layout(&out.layout, &out.slots, &out.suffix);
            out.est_tokens = self.estimator.estimate(&out.system) + self.estimator.estimate(&out.user);
            out.truncation = Some(Truncation {
                kept_paragraphs: kept,
                total_paragraphs: total,
            });
            out
        };

        if total < 2 {
            return Err(PromptError::BudgetImpossible {
                needed: prompt.est_tokens,
                budget,
            });
        }
        let smallest = candidate(1);
        if smallest.est_tokens > budget {
            return Err(PromptError::BudgetImpossible {
                needed: smallest.est_tokens,
                budget,
            });
        }
        // Largest kept count in [1, total - 1] that fits; size grows with `kept`.
        let (mut lo, mut hi) = (1, total - 1);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if candidate(mid).est_tokens <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Ok(candidate(lo))
    }
}

fn system_prompt(t: &StageTemplate) -> String {
    let bodies = [&t.role, &t.task, &t.input_format, &t.output_format];
    SECTION_LABELS
        .iter()
        .zip(bodies)
        .map(|(label, body)| format!("{label}\n{body}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn fenced_json(text: &str) -> String {
    format!("```json\n{}\n```", text.trim_end())
}

fn feedback_section(feedback: &Feedback) -> String {
    let mut out = String::from("Expert feedback:");
    if let Some(text) = &feedback.descriptive {
        out.push('\n');
        out.push_str(text.trim_end());
    }
    if let Some(edited) = &feedback.edited_schema {
        out.push_str("\n\nExpert-edited schema (supersedes the current schema):\n");
        out.push_str(&fenced_json(&serialize_canonical(edited)));
    }
    out
}

/// Substitutes `{Slot}` placeholders in one pass, so slot content is never
/// re-scanned. A placeholder with no value removes its whole line.
fn fill_layout(layout: &str, slots: &BTreeMap<Slot, String>, suffix: &str) -> String {
    let mut lines_out: Vec<String> = Vec::new();
    for line in layout.lines() {
        let missing = Slot::ALL
            .iter()
            .any(|s| line.contains(&s.placeholder()) && !slots.contains_key(s));
        if missing {
            continue;
        }
        let mut rendered = String::new();
        let mut rest = line;
        'scan: while let Some(open) = rest.find('{') {
            for slot in Slot::ALL {
                let ph = slot.placeholder();
                if rest[open..].starts_with(&ph) {
                    rendered.push_str(&rest[..open]);
                    rendered.push_str(&slots[&slot]);
                    rest = &rest[open + ph.len()..];
                    continue 'scan;
                }
            }
            rendered.push_str(&rest[..=open]);
            rest = &rest[open + 1..];
        }
        rendered.push_str(rest);
        lines_out.push(rendered);
    }
    let mut out = lines_out.join("\n");
    out.truncate(out.trim_end().len());
    if !suffix.is_empty() {
        out.push_str("\n\n");
        out.push_str(suffix);
    }
    out
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }
    paragraphs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;
    use chrono::DateTime;

    fn engine() -> PromptEngine {
        PromptEngine::new(TemplateSet::default())
    }

    fn feedback(descriptive: Option<&str>, edited: Option<SchemaDoc>) -> Feedback {
        Feedback::new(
            descriptive.map(String::from),
            edited,
            "expert",
            DateTime::from_timestamp(0, 0).unwrap(),
        )
        .unwrap()
    }

    fn prev() -> SchemaDoc {
        parse_schema(r#"{"type":"object","properties":{"temperature":{"type":"number","unit":"C"}}}"#).unwrap()
    }

    #[test]
    fn generate_contains_spec_verbatim() {
        let p = engine().render_generate("ALD process spec: {PrevSchema} stays literal").unwrap();
        assert!(p.user.contains("ALD process spec: {PrevSchema} stays literal"));
        assert_eq!(p.stage, StageId::Generate);
        let est = CharEstimator;
        assert_eq!(p.est_tokens, est.estimate(&p.system) + est.estimate(&p.user));
    }

    #[test]
    fn system_sections_in_order() {
        let e = engine();
        let prompts = [
            e.render_generate("spec").unwrap(),
            e.render_refine(&prev(), "paper", None).unwrap(),
            e.render_finalize(&prev(), "paper", None).unwrap(),
        ];
        for p in prompts {
            let positions: Vec<usize> = SECTION_LABELS
                .iter()
                .map(|l| {
                    assert_eq!(p.system.matches(l).count(), 1, "{l} in {:?}", p.stage);
                    p.system.find(l).unwrap()
                })
                .collect();
            assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(engine().render_generate(""), Err(PromptError::EmptyInput("DomainSpecification")));
        assert_eq!(
            engine().render_refine(&prev(), "  ", None),
            Err(PromptError::EmptyInput("SciPaper"))
        );
    }

    #[test]
    fn feedback_section_omitted_when_absent() {
        let p = engine().render_refine(&prev(), "paper text", None).unwrap();
        assert!(!p.user.contains("Expert feedback"));
        assert!(!p.user.contains("{ExpertFeedback}"));
        assert!(p.user.contains(&serialize_canonical(&prev()).trim_end().to_string()));
        assert!(p.user.ends_with("paper text"));
    }

    #[test]
    fn descriptive_only_feedback() {
        let fb = feedback(Some("Merge pressure fields."), None);
        let p = engine().render_refine(&prev(), "paper", Some(&fb)).unwrap();
        let at = p.user.find("Expert feedback:").unwrap();
        assert!(p.user[at..].contains("Merge pressure fields."));
        assert!(!p.user.contains("Expert-edited schema"));
    }

    #[test]
    fn combined_feedback_text_then_schema() {
        let edited = parse_schema(r#"{"type":"object","properties":{"pressure":{"type":"number"}}}"#).unwrap();
        let fb = feedback(Some("Use pascals."), Some(edited.clone()));
        let p = engine().render_refine(&prev(), "paper", Some(&fb)).unwrap();
        let text_at = p.user.find("Use pascals.").unwrap();
        let schema_at = p.user.find(serialize_canonical(&edited).trim_end()).unwrap();
        assert!(text_at < schema_at);
    }

    #[test]
    fn finalize_stage_and_redundancy_instruction() {
        let p = engine().render_finalize(&prev(), "paper", None).unwrap();
        assert_eq!(p.stage, StageId::Finalize);
        assert!(p.system.contains("avoiding irrelevant or redundant additions"));
        assert_eq!(p.slot(Slot::PrevSchema).unwrap(), fenced_json(&serialize_canonical(&prev())));
    }

    #[test]
    fn rendering_is_pure() {
        let e = engine();
        assert_eq!(
            e.render_refine(&prev(), "p", None).unwrap(),
            e.render_refine(&prev(), "p", None).unwrap()
        );
    }

    #[test]
    fn under_budget_unchanged() {
        let p = engine().render_refine(&prev(), "short paper", None).unwrap();
        assert_eq!(engine().fit_to_budget(&p, 128_000, 8_000).unwrap(), p);
    }

    #[test]
    fn over_budget_truncates_tail_paragraphs() {
        // 2000 paragraphs of ~400 chars = ~200K estimated tokens.
        let paragraph = "x".repeat(399);
        let paper: Vec<String> = (0..2000).map(|i| format!("{i:04}{paragraph}")).collect();
        let paper = paper.join("\n\n");
        let e = engine();
        let p = e.render_refine(&prev(), &paper, None).unwrap();
        assert!(p.est_tokens > 200_000);

        let fitted = e.fit_to_budget(&p, 128_000, 8_000).unwrap();
        let est = CharEstimator;
        let recomputed = est.estimate(&fitted.system) + est.estimate(&fitted.user);
        assert_eq!(fitted.est_tokens, recomputed);
        assert!(fitted.est_tokens <= 120_000);
        let sci = fitted.slot(Slot::SciPaper).unwrap();
        assert!(sci.starts_with("0000"));
        assert!(sci.trim_end().ends_with("paragraphs omitted to fit the context budget.]"));
        let t = fitted.truncation.unwrap();
        assert!(t.kept_paragraphs < 2000 && t.kept_paragraphs > 1000);
        // one more ~101-token paragraph would not have fit
        assert!(fitted.est_tokens + 101 > 120_000);
        assert!(fitted.slot(Slot::PrevSchema) == p.slot(Slot::PrevSchema));
        assert_eq!(fitted.system, p.system);

        // idempotent
        assert_eq!(e.fit_to_budget(&fitted, 128_000, 8_000).unwrap(), fitted);
    }

    #[test]
    fn oversized_prev_schema_is_impossible() {
        let mut root = String::from(r#"{"type":"object","properties":{"#);
        for i in 0..2000 {
            if i > 0 {
                root.push(',');
            }
            root.push_str(&format!(r#""property_{i}":{{"type":"string","description":"{}"}}"#, "d".repeat(50)));
        }
        root.push_str("}}");
        let big = parse_schema(&root).unwrap();
        let p = engine().render_refine(&big, "para one\n\npara two", None).unwrap();
        assert!(matches!(
            engine().fit_to_budget(&p, 10_000, 1_000),
            Err(PromptError::BudgetImpossible { .. })
        ));
    }

    #[test]
    fn invalid_budget() {
        let p = engine().render_generate("spec").unwrap();
        assert!(matches!(engine().fit_to_budget(&p, 100, 100), Err(PromptError::InvalidBudget { .. })));
        assert!(matches!(engine().fit_to_budget(&p, 100, 0), Err(PromptError::InvalidBudget { .. })));
    }

    #[test]
    fn user_suffix_keeps_base_prompt() {
        let e = engine();
        let p = e.render_generate("spec").unwrap();
        let r = p.with_user_suffix("fix it", e.estimator());
        assert!(r.user.starts_with(&p.user));
        assert!(r.user.ends_with("fix it"));
        assert!(r.est_tokens > p.est_tokens);
    }
}
