//! The interface every decision maker implements.

use ndarray::Array2;
use thiserror::Error;

use crate::channel::ChannelSample;
use crate::config::SimConfig;
use crate::decision::{ActionMatrix, DecisionError};
use crate::learners::LearnerError;
use crate::llm::LlmError;
use crate::metrics::SlotMetrics;
use crate::observation::Observation;
use crate::queueing::QueueState;
use crate::scenario::{TaskMatrix, TwinModel};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{0}")]
    Unsupported(String),
}

/// Everything the twin layer knows when it decides for one slot.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub config: &'a SimConfig,
    pub slot: u64,
    pub tasks: &'a TaskMatrix,
    pub twins: &'a [TwinModel],
    pub channels: &'a [ChannelSample],
    pub observations: &'a [Observation],
    /// Normalised N×(K+3) state.
    pub state: &'a Array2<f64>,
    pub queues: &'a QueueState,
    pub bias: &'a Array2<f64>,
}

pub trait Policy {
    fn name(&self) -> String;

    /// Raw decision; the caller projects it onto the feasible set.
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError>;

    /// Called after the slot with the applied (projected) action.
    fn record(
        &mut self,
        _ctx: &DecisionContext<'_>,
        _action: &ActionMatrix,
        _metrics: &SlotMetrics,
    ) -> Result<(), PolicyError> {
        Ok(())
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        (**self).decide(ctx)
    }

    fn record(&mut self, ctx: &DecisionContext<'_>, action: &ActionMatrix, metrics: &SlotMetrics) -> Result<(), PolicyError> {
        (**self).record(ctx, action, metrics)
    }
}
