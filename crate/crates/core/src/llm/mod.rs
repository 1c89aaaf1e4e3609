//! Prompt templates, tag parsing and completion backends.

mod backend;
mod tags;
mod template;

pub use backend::{
    build_backend, bulk_complete, whitespace_tokens, BackendConfig, BackendError, BackendKind,
    BulkOutput, BulkReport, Completion, CompletionBackend, CompletionRequest, HttpBackend,
    ItemError, SimBackend, SimTask,
};
pub use tags::{extract_tag, extract_tag_detailed, parse_sbs_verdict, Extracted, Verdict};
pub use template::{PromptTemplate, TemplateFamily, TemplateKind};

use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("missing slot: {0}")]
    MissingSlot(String),
    #[error("extra slot: {0}")]
    ExtraSlot(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("tag not found: <{0}>")]
    TagNotFound(String),
    #[error("unrecognized verdict: {0:?}")]
    Verdict(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}
