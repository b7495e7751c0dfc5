//! The per-slot pipeline and whole episodes.

use std::time::Instant;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::channel::ChannelSample;
use crate::config::SimConfig;
use crate::decision::{self, ActionMatrix, ObjectiveValue};
use crate::learners::UniformPolicy;
use crate::metrics::{self, SlotMetrics};
use crate::observation::{self, Observation};
use crate::policy::{DecisionContext, Policy};
use crate::queueing::{self, BacklogRecord, QueueState, StabilityReport};
use crate::scenario::{self, ScenarioState, TaskMatrix, TwinModel};

/// What the twin layer sees at the start of a slot, before anyone decides.
#[derive(Debug, Clone)]
pub struct SlotInputs {
    pub tasks: TaskMatrix,
    pub twins: Vec<TwinModel>,
    pub channels: Vec<ChannelSample>,
    pub observations: Vec<Observation>,
    pub state: Array2<f64>,
    pub bias: Array2<f64>,
}

impl SlotInputs {
    pub fn context<'a>(&'a self, sc: &'a ScenarioState) -> DecisionContext<'a> {
        self.context_with(&sc.config, sc.slot, &sc.queues)
    }

    pub fn context_with<'a>(&'a self, config: &'a SimConfig, slot: u64, queues: &'a QueueState) -> DecisionContext<'a> {
        DecisionContext {
            config,
            slot,
            tasks: &self.tasks,
            twins: &self.twins,
            channels: &self.channels,
            observations: &self.observations,
            state: &self.state,
            queues,
            bias: &self.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    /// The applied decision, after projection.
    pub action: ActionMatrix,
    pub metrics: SlotMetrics,
    pub objective: ObjectiveValue,
    /// `L(q_{t+1}) − L(q_t)`.
    pub drift: f64,
    /// `½ Σ (Z − φ)² + Σ q (Z − φ)` for the same slot.
    pub drift_bound: f64,
    pub used_fallback: bool,
}

/// Task generation, twin sync and channel sampling.
pub fn prepare_slot(sc: &mut ScenarioState) -> Result<SlotInputs, HarnessError> {
    let tasks = sc.generate_tasks();
    let twins = sc.sync_twins(&tasks);
    let channels = sc.sample_channels()?;
    let observations = observation::observations(&tasks, &sc.vehicles, &channels);
    let state = observation::state_matrix(&sc.config, &observations);
    let bias = decision::bias_matrix(&twins);
    Ok(SlotInputs {
        tasks,
        twins,
        channels,
        observations,
        state,
        bias,
    })
}

/// Projects `raw`, moves the queues, evaluates the slot and advances the world.
pub fn apply_action(
    sc: &mut ScenarioState,
    inputs: &SlotInputs,
    raw: &ActionMatrix,
) -> Result<(SlotRecord, BacklogRecord), HarnessError> {
    let cfg = &sc.config;
    let fe = cfg.server_cpu_fe;
    let action = decision::project_feasible(raw, &inputs.bias, fe, cfg.alpha_min)?;
    let z = queueing::arrivals(&action, &inputs.tasks)?;
    let phi = queueing::service(&action, fe, &cfg.cycles_per_byte_ck, cfg.slot_dt);
    let q_before = sc.queues.backlog_q.clone();
    let rates: Vec<f64> = inputs.channels.iter().map(|c| c.rate_r).collect();
    let metrics = metrics::compute_slot_metrics(cfg, &action, &inputs.tasks, &rates, &inputs.bias)?;
    let mut objective = decision::p2_objective(
        &sc.queues,
        &action,
        &inputs.tasks,
        &metrics,
        cfg.beta,
        fe,
        &cfg.cycles_per_byte_ck,
    )?;
    objective.constraint_violations =
        decision::check_constraints(&action, Some(&metrics), &inputs.bias, fe, &cfg.max_delay_tmax);
    let drift_bound = queueing::one_slot_drift_bound(&q_before, &z, &phi);
    sc.queues.step(&z, &phi);
    let drift = queueing::drift_sample(&q_before, &sc.queues.backlog_q);
    let backlog = BacklogRecord {
        slot: sc.slot,
        q: sc.queues.backlog_q.clone(),
        z,
        phi,
    };
    let record = SlotRecord {
        slot: sc.slot,
        action,
        metrics,
        objective,
        drift,
        drift_bound,
        used_fallback: false,
    };
    let dt = sc.config.slot_dt;
    sc.advance_vehicles(dt);
    sc.evolve_fading(dt);
    sc.slot += 1;
    Ok((record, backlog))
}

/// One full slot with `policy`. A failed decision falls back to the uniform
/// policy for that slot.
pub fn run_slot<P: Policy + ?Sized>(
    sc: &mut ScenarioState,
    policy: &mut P,
) -> Result<(SlotRecord, BacklogRecord), HarnessError> {
    run_slot_keep_inputs(sc, policy).map(|(r, b, _)| (r, b))
}

/// [`run_slot`], also returning what the policy saw.
pub fn run_slot_keep_inputs<P: Policy + ?Sized>(
    sc: &mut ScenarioState,
    policy: &mut P,
) -> Result<(SlotRecord, BacklogRecord, SlotInputs), HarnessError> {
    let inputs = prepare_slot(sc)?;
    let (raw, fallback) = match policy.decide(&inputs.context(sc)) {
        Ok(a) => (a, false),
        Err(e) => {
            warn!("slot {}: {} failed ({e}); using uniform allocation", sc.slot, policy.name());
            (UniformPolicy.decide(&inputs.context(sc))?, true)
        }
    };
    let queues_before = sc.queues.clone();
    let (mut record, backlog) = apply_action(sc, &inputs, &raw)?;
    record.used_fallback = fallback;
    let ctx = inputs.context_with(&sc.config, record.slot, &queues_before);
    if let Err(e) = policy.record(&ctx, &record.action, &record.metrics) {
        warn!("slot {}: {} could not record the outcome ({e})", record.slot, policy.name());
    }
    Ok((record, backlog, inputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub policy: String,
    pub config: SimConfig,
    pub slots: Vec<SlotRecord>,
    pub backlog: Vec<BacklogRecord>,
    pub stability: Option<StabilityReport>,
    /// Why `stability` is missing, if it is.
    pub stability_note: Option<String>,
    pub runtime_s: f64,
}

impl EpisodeResult {
    fn mean(&self, f: impl Fn(&SlotRecord) -> f64) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        self.slots.iter().map(f).sum::<f64>() / self.slots.len() as f64
    }

    pub fn mean_energy(&self) -> f64 {
        self.mean(|s| s.metrics.e_system)
    }

    pub fn mean_delay(&self) -> f64 {
        self.mean(|s| s.metrics.mean_delay())
    }

    pub fn mean_qos(&self) -> f64 {
        self.mean(|s| s.metrics.qos_system)
    }

    pub fn mean_edge_energy(&self) -> f64 {
        self.mean(|s| s.metrics.e_edge)
    }

    pub fn mean_alpha_sum(&self) -> f64 {
        self.mean(|s| s.action.alpha_sum())
    }

    pub fn fallbacks(&self) -> usize {
        self.slots.iter().filter(|s| s.used_fallback).count()
    }

    pub fn is_stable(&self) -> bool {
        self.stability.as_ref().is_some_and(|s| s.stable)
    }
}

/// `Z_k^max = N · max task size` for every type.
pub fn zmax(config: &SimConfig) -> Vec<f64> {
    vec![config.n_vehicles as f64 * config.task_size_range.1; config.n_task_types]
}

pub fn run_episode<P: Policy + ?Sized>(
    config: &SimConfig,
    policy: &mut P,
    horizon: usize,
) -> Result<EpisodeResult, HarnessError> {
    let start = Instant::now();
    let mut sc = scenario::init_scenario(config.clone())?;
    let mut slots = Vec::with_capacity(horizon);
    let mut backlog = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (r, b) = run_slot(&mut sc, policy)?;
        slots.push(r);
        backlog.push(b);
    }
    let b = queueing::drift_bound_B(&zmax(config), config.server_cpu_fe, &config.cycles_per_byte_ck);
    let (stability, stability_note) = match queueing::stability_report(&backlog, b) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(format!("insufficient data: {e}"))),
    };
    Ok(EpisodeResult {
        policy: policy.name(),
        config: config.clone(),
        slots,
        backlog,
        stability,
        stability_note,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
