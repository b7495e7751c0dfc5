//! Discrete-time simulator and decision engine for a digital-twin vehicular
//! edge computing network.
//!
//! Each slot, vehicles generate one task per type, their twins are
//! synchronised, channels are sampled, and a [`policy::Policy`] chooses offload
//! ratios and server shares. The harness projects the decision onto the
//! feasible set, moves the edge queues and evaluates delay, QoS and energy.
//! Policies include fixed baselines, actor-critic learners and an in-context
//! learning agent driven by a completion backend.

pub mod channel;
pub mod config;
pub mod decision;
pub mod harness;
pub mod learners;
pub mod llm;
pub mod metrics;
pub mod observation;
pub mod policy;
pub mod queueing;
pub mod scenario;

pub use channel::{ChannelError, ChannelSample};
pub use config::{ConfigError, SimConfig};
pub use decision::{ActionMatrix, ConstraintId, DecisionError, ObjectiveValue, Violation};
pub use harness::{EpisodeResult, HarnessError, SlotRecord, SweepSpec};
pub use learners::{LearnerConfig, LearnerError, TrainingReport};
pub use llm::{CaseRecord, CaseSet, LlmError, PromptBundle};
pub use metrics::{MetricsError, SlotMetrics};
pub use observation::Observation;
pub use policy::{DecisionContext, Policy, PolicyError};
pub use queueing::{BacklogRecord, QueueError, QueueState, StabilityReport};
pub use scenario::{ScenarioState, Task, TaskMatrix, TwinModel, VehicleId, VehicleState};

/// Any error the library can return.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
