//! The decision loop: prompt, complete, parse, project; nearest-case replay
//! when the backend keeps failing; every applied decision becomes a new case.

use std::path::PathBuf;

use log::warn;
use serde::{Deserialize, Serialize};

use super::backend::CompletionBackend;
use super::cases::{append_case, CaseOutcome, CaseRecord, CaseSet};
use super::parse::parse_action_matrix;
use super::prompt::build_prompt;
use super::LlmError;
use crate::decision::{self, ActionMatrix};
use crate::metrics::SlotMetrics;
use crate::policy::{DecisionContext, Policy, PolicyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub token_budget: usize,
    /// Extra attempts after the first failed completion.
    pub max_retries: usize,
    pub include_outcomes: bool,
    /// Append each applied decision to the case set.
    pub learn_online: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            token_budget: 6000,
            max_retries: 2,
            include_outcomes: false,
            learn_online: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmDecision {
    /// Projected onto the feasible set.
    pub action: ActionMatrix,
    /// Failed attempts before the accepted one (or before the fallback).
    pub retries: usize,
    pub used_fallback: bool,
}

fn state_rows(ctx: &DecisionContext<'_>) -> Vec<Vec<f64>> {
    ctx.state.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn decide(
    ctx: &DecisionContext<'_>,
    backend: &mut dyn CompletionBackend,
    cases: &CaseSet,
    config: &LlmConfig,
) -> Result<LlmDecision, LlmError> {
    let cfg = ctx.config;
    let (n, k) = (cfg.n_vehicles, cfg.n_task_types);
    let state = state_rows(ctx);
    let project = |a: &ActionMatrix| decision::project_feasible(a, ctx.bias, cfg.server_cpu_fe, cfg.alpha_min);
    let mut retries = 0;
    match build_prompt(cases, &state, config.token_budget, config.include_outcomes) {
        Ok(prompt) => {
            for attempt in 0..=config.max_retries {
                let result = backend
                    .complete(&prompt.text)
                    .and_then(|text| parse_action_matrix(&text, n, k));
                match result {
                    Ok(a) => {
                        return Ok(LlmDecision {
                            action: project(&a)?,
                            retries,
                            used_fallback: false,
                        })
                    }
                    Err(e) => {
                        warn!("slot {}: completion attempt {} failed: {e}", ctx.slot, attempt + 1);
                        retries += 1;
                    }
                }
            }
        }
        Err(e) => warn!("slot {}: {e}", ctx.slot),
    }
    let nearest = cases.nearest(&state).ok_or(LlmError::EmptyCaseSet)?;
    Ok(LlmDecision {
        action: project(&nearest.action_matrix()?)?,
        retries,
        used_fallback: true,
    })
}

pub struct LlmPolicy {
    pub backend: Box<dyn CompletionBackend>,
    pub cases: CaseSet,
    pub config: LlmConfig,
    /// JSONL file that receives every appended case.
    pub persist: Option<PathBuf>,
    pub total_retries: usize,
    pub fallbacks: usize,
}

impl LlmPolicy {
    pub fn new(backend: Box<dyn CompletionBackend>, cases: CaseSet, config: LlmConfig) -> Self {
        Self {
            backend,
            cases,
            config,
            persist: None,
            total_retries: 0,
            fallbacks: 0,
        }
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> String {
        format!("llm-{}", self.backend.name())
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        let d = decide(ctx, self.backend.as_mut(), &self.cases, &self.config)?;
        self.total_retries += d.retries;
        self.fallbacks += usize::from(d.used_fallback);
        Ok(d.action)
    }

    fn record(&mut self, ctx: &DecisionContext<'_>, action: &ActionMatrix, metrics: &SlotMetrics) -> Result<(), PolicyError> {
        if !self.config.learn_online {
            return Ok(());
        }
        let rec = CaseRecord::new(ctx.state, action, Some(CaseOutcome::from(metrics)), ctx.slot);
        append_case(&mut self.cases, rec, self.persist.as_deref())?;
        Ok(())
    }
}
