//! Multi-agent environments for the learners: the vehicular simulator itself
//! and two tiny games with known optima.

use ndarray::Array2;

use super::codebook::Codebook;
use super::LearnerError;
use crate::config::SimConfig;
use crate::decision::{self, ActionMatrix};
use crate::harness::episode::{self, SlotInputs};
use crate::llm::CaseRecord;
use crate::scenario::{self, ScenarioState};

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Encoding of a discrete action as seen by the critics.
    fn action_features(&self, action: usize) -> Vec<f64>;
    fn action_feature_dim(&self) -> usize;
    /// Starts episode `episode` and returns one observation per agent.
    fn reset(&mut self, episode: u64) -> Result<Vec<Vec<f64>>, LearnerError>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, LearnerError>;
    /// The (state, applied action) pair of the last step, where meaningful.
    fn last_case(&self) -> Option<CaseRecord> {
        None
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Single agent, constant observation; one arm pays 1, every other arm 0.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub n_arms: usize,
    pub good_arm: usize,
}

impl MultiAgentEnv for BanditEnv {
    fn n_agents(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn n_actions(&self) -> usize {
        self.n_arms
    }
    fn action_features(&self, action: usize) -> Vec<f64> {
        one_hot(self.n_arms, action)
    }
    fn action_feature_dim(&self) -> usize {
        self.n_arms
    }
    fn reset(&mut self, _episode: u64) -> Result<Vec<Vec<f64>>, LearnerError> {
        Ok(vec![vec![1.0]])
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, LearnerError> {
        let r = if actions[0] == self.good_arm { 1.0 } else { 0.0 };
        Ok(StepResult {
            next_obs: vec![vec![1.0]],
            rewards: vec![r],
        })
    }
}

/// Two agents, two arms each; both are paid 1 only when both pick arm 0.
#[derive(Debug, Clone, Default)]
pub struct CoordinationEnv;

impl CoordinationEnv {
    /// Best joint payoff, by enumeration of the 2×2 game.
    pub fn optimum() -> f64 {
        let mut best = f64::NEG_INFINITY;
        for a in 0..2 {
            for b in 0..2 {
                best = best.max(Self::payoff(a, b));
            }
        }
        best
    }

    fn payoff(a: usize, b: usize) -> f64 {
        if a == 0 && b == 0 {
            1.0
        } else {
            0.0
        }
    }
}

impl MultiAgentEnv for CoordinationEnv {
    fn n_agents(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn action_features(&self, action: usize) -> Vec<f64> {
        one_hot(2, action)
    }
    fn action_feature_dim(&self) -> usize {
        2
    }
    fn reset(&mut self, _episode: u64) -> Result<Vec<Vec<f64>>, LearnerError> {
        Ok(vec![vec![1.0]; 2])
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, LearnerError> {
        let r = Self::payoff(actions[0], actions[1]);
        Ok(StepResult {
            next_obs: vec![vec![1.0]; 2],
            rewards: vec![r; 2],
        })
    }
}

/// Wraps an environment and replaces every reward by a constant.
#[derive(Debug, Clone)]
pub struct ConstantReward<E> {
    pub inner: E,
    pub value: f64,
}

impl<E: MultiAgentEnv> MultiAgentEnv for ConstantReward<E> {
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
    fn action_features(&self, action: usize) -> Vec<f64> {
        self.inner.action_features(action)
    }
    fn action_feature_dim(&self) -> usize {
        self.inner.action_feature_dim()
    }
    fn reset(&mut self, episode: u64) -> Result<Vec<Vec<f64>>, LearnerError> {
        self.inner.reset(episode)
    }
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, LearnerError> {
        let mut s = self.inner.step(actions)?;
        s.rewards.iter_mut().for_each(|r| *r = self.value);
        Ok(s)
    }
    fn last_case(&self) -> Option<CaseRecord> {
        self.inner.last_case()
    }
}

/// The vehicular simulator as a multi-agent environment: one agent per
/// vehicle, actions from the codebook, rewards from the learner reward.
/// Episode `e` runs the scenario with seed `config.seed + e`.
pub struct VecEnv {
    config: SimConfig,
    codebook: Codebook,
    scenario: Option<ScenarioState>,
    pending: Option<SlotInputs>,
    last_case: Option<CaseRecord>,
}

impl VecEnv {
    pub fn new(config: SimConfig) -> Result<Self, LearnerError> {
        config.validate().map_err(|e| LearnerError::Env(e.to_string()))?;
        let codebook = Codebook::new(config.n_task_types);
        Ok(Self {
            config,
            codebook,
            scenario: None,
            pending: None,
            last_case: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn codebook(&self) -> Codebook {
        self.codebook
    }

    fn obs_rows(state: &Array2<f64>) -> Vec<Vec<f64>> {
        state.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn env_err(e: impl std::fmt::Display) -> LearnerError {
        LearnerError::Env(e.to_string())
    }
}

impl MultiAgentEnv for VecEnv {
    fn n_agents(&self) -> usize {
        self.config.n_vehicles
    }
    fn obs_dim(&self) -> usize {
        self.config.n_task_types + 3
    }
    fn n_actions(&self) -> usize {
        self.codebook.size()
    }
    fn action_features(&self, action: usize) -> Vec<f64> {
        self.codebook.features(action).expect("trainer only emits codebook indices")
    }
    fn action_feature_dim(&self) -> usize {
        2 * self.config.n_task_types
    }

    fn reset(&mut self, episode: u64) -> Result<Vec<Vec<f64>>, LearnerError> {
        let mut cfg = self.config.clone();
        cfg.seed = cfg.seed.wrapping_add(episode);
        let mut sc = scenario::init_scenario(cfg).map_err(Self::env_err)?;
        let inputs = episode::prepare_slot(&mut sc).map_err(Self::env_err)?;
        let obs = Self::obs_rows(&inputs.state);
        self.scenario = Some(sc);
        self.pending = Some(inputs);
        self.last_case = None;
        Ok(obs)
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, LearnerError> {
        let (Some(sc), Some(inputs)) = (self.scenario.as_mut(), self.pending.as_ref()) else {
            return Err(LearnerError::Env("step called before reset".into()));
        };
        let (n, k) = (self.config.n_vehicles, self.config.n_task_types);
        if actions.len() != n {
            return Err(LearnerError::Shape(format!("{} actions for {n} agents", actions.len())));
        }
        let mut raw = ActionMatrix::filled(n, k, 0.0, 0.0);
        for (v, &a) in actions.iter().enumerate() {
            let (w, al) = self.codebook.decode(a)?;
            raw.set_vehicle(v, &w, &al);
        }
        let (record, _) = episode::apply_action(sc, inputs, &raw).map_err(Self::env_err)?;
        let fe = self.config.server_cpu_fe;
        let eta = self.config.eta();
        let rewards = record
            .metrics
            .qos_vehicle
            .iter()
            .map(|&u| decision::reward(u, &record.action, &inputs.bias, fe, eta))
            .collect();
        self.last_case = Some(CaseRecord::new(&inputs.state, &record.action, None, record.slot));
        let next = episode::prepare_slot(sc).map_err(Self::env_err)?;
        let next_obs = Self::obs_rows(&next.state);
        self.pending = Some(next);
        Ok(StepResult { next_obs, rewards })
    }

    fn last_case(&self) -> Option<CaseRecord> {
        self.last_case.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordination_optimum_by_enumeration() {
        assert_eq!(CoordinationEnv::optimum(), 1.0);
        let mut env = CoordinationEnv;
        assert_eq!(env.step(&[0, 0]).unwrap().rewards, vec![1.0, 1.0]);
        assert_eq!(env.step(&[0, 1]).unwrap().rewards, vec![0.0, 0.0]);
    }

    #[test]
    fn vec_env_steps() {
        let mut env = VecEnv::new(SimConfig::with_shape(2, 2)).unwrap();
        assert_eq!(env.n_actions(), 900);
        assert!(env.step(&[0, 0]).is_err());
        let obs = env.reset(0).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].len(), 5);
        let s = env.step(&[899, 0]).unwrap();
        assert_eq!(s.rewards.len(), 2);
        assert!(s.rewards.iter().all(|r| r.is_finite()));
        let case = env.last_case().unwrap();
        assert_eq!(case.action[0], vec![1.0, 1.0, 0.1, 0.1]);
    }

    #[test]
    fn vec_env_reset_is_deterministic() {
        let mut a = VecEnv::new(SimConfig::with_shape(2, 2)).unwrap();
        let mut b = VecEnv::new(SimConfig::with_shape(2, 2)).unwrap();
        assert_eq!(a.reset(3).unwrap(), b.reset(3).unwrap());
        assert_ne!(a.reset(4).unwrap(), b.reset(3).unwrap());
    }

    #[test]
    fn constant_reward_wrapper() {
        let mut env = ConstantReward {
            inner: BanditEnv { n_arms: 3, good_arm: 1 },
            value: 0.25,
        };
        env.reset(0).unwrap();
        assert_eq!(env.step(&[1]).unwrap().rewards, vec![0.25]);
    }
}
