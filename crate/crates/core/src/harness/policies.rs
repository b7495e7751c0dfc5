//! Policy construction by name.
//!
//! Recognised names: `uniform`, `greedy`, `random`, `fixed:<ω>:<α>`, `llm`,
//! `marl`, `sarl`.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::episode::run_slot_keep_inputs;
use super::HarnessError;
use crate::config::SimConfig;
use crate::learners::checkpoint;
use crate::learners::{
    FixedPolicy, GreedyLocalPolicy, LearnedPolicy, LearnerConfig, RandomPolicy, Trainer, UniformPolicy, VecEnv,
};
use crate::llm::{CaseRecord, CaseSet, HttpBackend, LlmConfig, LlmPolicy, MockBackend};
use crate::policy::Policy;
use crate::scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Mock,
    Http,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(Self::Mock),
            "http" => Ok(Self::Http),
            other => Err(format!("unknown backend `{other}` (expected mock or http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOptions {
    pub backend: BackendKind,
    pub model: String,
    pub llm: LlmConfig,
    /// JSONL case set for the LLM policy. Without it the cases come from a
    /// rollout of `case_source` on the same configuration.
    pub case_file: Option<PathBuf>,
    pub case_source: String,
    /// Length of that rollout; `None` means the episode horizon.
    pub case_slots: Option<usize>,
    pub marl_checkpoint: Option<PathBuf>,
    pub sarl_checkpoint: Option<PathBuf>,
    /// Episodes for training a learner in place when no checkpoint is given.
    pub learner_episodes: usize,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model: "llama-3.1-8b".into(),
            llm: LlmConfig::default(),
            case_file: None,
            case_source: "uniform".into(),
            case_slots: None,
            marl_checkpoint: None,
            sarl_checkpoint: None,
            learner_episodes: 0,
        }
    }
}

/// Runs `policy` for `slots` slots and keeps every (state, applied action).
pub fn collect_cases(config: &SimConfig, policy: &mut dyn Policy, slots: usize) -> Result<CaseSet, HarnessError> {
    let mut sc = scenario::init_scenario(config.clone())?;
    let mut cases = CaseSet::new();
    for _ in 0..slots {
        let (rec, _, inputs) = run_slot_keep_inputs(&mut sc, policy)?;
        cases.push(CaseRecord::new(&inputs.state, &rec.action, None, rec.slot));
    }
    Ok(cases)
}

fn learned(
    name: &str,
    config: &SimConfig,
    checkpoint_path: Option<&PathBuf>,
    episodes: usize,
    base: LearnerConfig,
) -> Result<Box<dyn Policy>, HarnessError> {
    if let Some(p) = checkpoint_path {
        let snap = checkpoint::load(p)?;
        return Ok(Box::new(LearnedPolicy::from_snapshot(name, &snap)?));
    }
    if episodes == 0 {
        return Err(HarnessError::Spec(format!(
            "policy `{name}` needs a checkpoint or a nonzero learner episode count"
        )));
    }
    let mut env = VecEnv::new(config.clone())?;
    let cfg = LearnerConfig { episodes, ..base.with_sim(config) };
    let mut trainer = Trainer::new(cfg, &env);
    trainer.train(&mut env)?;
    Ok(Box::new(trainer.learned_policy(name, config.n_task_types)))
}

pub fn build_policy(
    name: &str,
    config: &SimConfig,
    horizon: usize,
    opts: &PolicyOptions,
) -> Result<Box<dyn Policy>, HarnessError> {
    let policy: Box<dyn Policy> = match name {
        "uniform" => Box::new(UniformPolicy),
        "greedy" | "greedy-local" => Box::new(GreedyLocalPolicy),
        "random" => Box::new(RandomPolicy::new(config.seed)),
        "marl" => learned("marl", config, opts.marl_checkpoint.as_ref(), opts.learner_episodes, LearnerConfig::marl())?,
        "sarl" => learned("sarl", config, opts.sarl_checkpoint.as_ref(), opts.learner_episodes, LearnerConfig::sarl())?,
        "llm" => {
            let cases = match &opts.case_file {
                Some(p) => CaseSet::load(p)?,
                None => {
                    if opts.case_source == "llm" {
                        return Err(HarnessError::Spec("the llm case source cannot be llm itself".into()));
                    }
                    let mut src = build_policy(&opts.case_source, config, horizon, opts)?;
                    collect_cases(config, src.as_mut(), opts.case_slots.unwrap_or(horizon))?
                }
            };
            let backend: Box<dyn crate::llm::CompletionBackend> = match opts.backend {
                BackendKind::Mock => Box::new(MockBackend::new(cases.clone())?),
                BackendKind::Http => Box::new(HttpBackend::from_env(opts.model.clone(), Duration::from_secs(60))?),
            };
            Box::new(LlmPolicy::new(backend, cases, opts.llm.clone()))
        }
        other => {
            let parts: Vec<&str> = other.split(':').collect();
            match parts.as_slice() {
                ["fixed", w, a] => {
                    let parse = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| HarnessError::Spec(format!("bad number `{s}` in policy `{other}`")))
                    };
                    Box::new(FixedPolicy::new(parse(w)?, parse(a)?))
                }
                _ => {
                    return Err(HarnessError::Spec(format!(
                        "unknown policy `{other}` (expected uniform, greedy, random, fixed:<omega>:<alpha>, llm, marl or sarl)"
                    )))
                }
            }
        }
    };
    Ok(policy)
}
