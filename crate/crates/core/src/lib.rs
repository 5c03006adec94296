//! Core library for iterative, LLM-assisted JSON schema mining.
//!
//! The crate is split along the workflow:
//!
//! - [`schema`] models, parses, diffs and de-duplicates schema documents;
//! - [`prompt`] renders the three stage prompts and fits them to a context budget;
//! - [`gateway`] talks to OpenAI-compatible chat endpoints and repairs malformed output;
//! - [`corpus`] loads the specification, curated and extended document sets;
//! - [`pipeline`] runs the stages, opens feedback gates and persists snapshots;
//! - [`grounding`] maps schema properties to ontology terms;
//! - [`metrics`] compares schemas with ROUGE-L, BLEU and embedding F1.

pub mod schema;
pub mod text;
pub mod feedback;
pub mod prompt;
pub mod gateway;
pub mod corpus;
pub mod pipeline;
pub mod embed;
pub mod grounding;
pub mod metrics;
