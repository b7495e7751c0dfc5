//! Episodes, sweeps over the experiment axes, and result files.

pub mod episode;
pub mod policies;
pub mod report;
pub mod sweep;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::config::ConfigError;
use crate::decision::DecisionError;
use crate::learners::LearnerError;
use crate::llm::LlmError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::queueing::QueueError;

pub use episode::{run_episode, run_slot, EpisodeResult, SlotInputs, SlotRecord};
pub use policies::{build_policy, collect_cases, BackendKind, PolicyOptions};
pub use report::{write_backlog_csv, write_report, write_slot_csv, FIGURES};
pub use sweep::{run_sweep, CellFailure, SweepResult, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{0}")]
    Spec(String),
    #[error("refusing to write non-finite value in {what}")]
    NonFinite { what: String },
    #[error("malformed results file {path}: {reason}")]
    Results { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &std::path::Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
