//! Baseline policies and the actor-critic learners (centralised and local critics).

pub mod baselines;
pub mod checkpoint;
pub mod codebook;
pub mod env;
pub mod maddpg;
pub mod nn;

use thiserror::Error;

pub use baselines::{FixedPolicy, GreedyLocalPolicy, RandomPolicy, UniformPolicy};
pub use codebook::Codebook;
pub use env::{BanditEnv, ConstantReward, CoordinationEnv, MultiAgentEnv, StepResult, VecEnv};
pub use maddpg::{LearnedPolicy, LearnerConfig, Trainer, TrainingReport};
pub use nn::{Activation, Adam, Mlp, Optimizer, OptimizerKind};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("codebook index {index} out of range (size {size})")]
    CodebookIndex { index: usize, size: usize },
    #[error("action (omega {omega}, alpha {alpha}) is not a codebook grid point")]
    OffGrid { omega: f64, alpha: f64 },
    #[error("training diverged at episode {episode}: {reason}")]
    Diverged {
        episode: usize,
        reason: String,
        /// Parameters from the last episode that finished with finite losses.
        last_stable: Option<Box<checkpoint::Snapshot>>,
    },
    #[error("environment error: {0}")]
    Env(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
