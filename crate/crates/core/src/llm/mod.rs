//! In-context learning policy: prompts built from a case set, a completion
//! backend, and a tolerant parser for the returned action matrix.

pub mod agent;
pub mod backend;
pub mod cases;
pub mod parse;
pub mod prompt;

use thiserror::Error;

use crate::decision::DecisionError;

pub use agent::{decide, LlmConfig, LlmDecision, LlmPolicy};
pub use backend::{CompletionBackend, HttpBackend, MockBackend, ScriptedBackend};
pub use cases::{append_case, CaseOutcome, CaseRecord, CaseSet, DEFAULT_CAPACITY};
pub use parse::parse_action_matrix;
pub use prompt::{build_prompt, select_cases, PromptBundle, TASK_DESCRIPTION};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("no action matrix found in the completion: {0}")]
    Parse(String),
    #[error("completion holds a {got_rows}x{got_cols} matrix, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("prompt needs {needed} tokens with no cases, budget is {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("mock backend: {0}")]
    Mock(String),
    #[error("case set is empty, no fallback decision available")]
    EmptyCaseSet,
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("case storage error on {path}: {reason}")]
    Storage { path: String, reason: String },
    #[error(transparent)]
    Decision(#[from] DecisionError),
}
