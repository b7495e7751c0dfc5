//! Non-learning reference policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codebook::Codebook;
use crate::decision::ActionMatrix;
use crate::metrics;
use crate::policy::{DecisionContext, Policy, PolicyError};

/// Equal share of the usable server capacity for every pair.
fn uniform_alpha(ctx: &DecisionContext<'_>) -> f64 {
    let (n, k) = (ctx.config.n_vehicles, ctx.config.n_task_types);
    let budget = ctx.config.capacity_budget(ctx.bias.sum()).min(1.0);
    (budget / (n * k) as f64).max(ctx.config.alpha_min)
}

/// Half of every task offloaded, capacity split evenly.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        let (n, k) = (ctx.config.n_vehicles, ctx.config.n_task_types);
        Ok(ActionMatrix::filled(n, k, 0.5, uniform_alpha(ctx)))
    }
}

/// Computes locally unless the vehicle alone would miss the deadline, in
/// which case the whole task goes to the server with an even share.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyLocalPolicy;

impl Policy for GreedyLocalPolicy {
    fn name(&self) -> String {
        "greedy-local".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        let cfg = ctx.config;
        let (n, k) = (cfg.n_vehicles, cfg.n_task_types);
        let alpha = uniform_alpha(ctx);
        let mut out = ActionMatrix::filled(n, k, 0.0, alpha);
        for v in 0..n {
            for t in 0..k {
                let d = metrics::local_delay(0.0, ctx.tasks.size(v, t), cfg.cycles_per_byte_ck[t], cfg.vehicle_cpu_fv);
                if d > cfg.max_delay_tmax[t] {
                    out.offload_omega[[v, t]] = 1.0;
                }
            }
        }
        Ok(out)
    }
}

/// Uniform draws from the learners' action grid, one per vehicle.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        let (n, k) = (ctx.config.n_vehicles, ctx.config.n_task_types);
        let book = Codebook::new(k);
        let mut out = ActionMatrix::filled(n, k, 0.0, 0.0);
        for v in 0..n {
            let (w, a) = book.decode(self.rng.random_range(0..book.size()))?;
            out.set_vehicle(v, &w, &a);
        }
        Ok(out)
    }
}

/// The same ω and α for every pair, every slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPolicy {
    pub omega: f64,
    pub alpha: f64,
}

impl FixedPolicy {
    pub fn new(omega: f64, alpha: f64) -> Self {
        Self { omega, alpha }
    }
}

impl Policy for FixedPolicy {
    fn name(&self) -> String {
        format!("fixed:{}:{}", self.omega, self.alpha)
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<ActionMatrix, PolicyError> {
        Ok(ActionMatrix::filled(ctx.config.n_vehicles, ctx.config.n_task_types, self.omega, self.alpha))
    }
}
