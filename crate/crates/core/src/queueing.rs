//! Per-type server queues and the Lyapunov quantities built on them.
//!
//! Everything is counted in bytes. Service is a rate in the model, so it is
//! multiplied by the slot length before it meets the byte-valued backlog.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::ActionMatrix;
use crate::scenario::TaskMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("shape mismatch: actions are {actions:?}, tasks are {tasks:?}")]
    ShapeMismatch {
        actions: (usize, usize),
        tasks: (usize, usize),
    },
    #[error("stability report needs at least {needed} slots, got {got}")]
    HistoryTooShort { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    /// Backlog per type, bytes.
    pub backlog_q: Vec<f64>,
    /// Bytes that arrived in the last slot.
    pub slot_arrivals_z: Vec<f64>,
    /// Bytes the server could serve in the last slot.
    pub slot_service_phi: Vec<f64>,
}

impl QueueState {
    pub fn new(k: usize) -> Self {
        Self {
            backlog_q: vec![0.0; k],
            slot_arrivals_z: vec![0.0; k],
            slot_service_phi: vec![0.0; k],
        }
    }

    pub fn total_backlog(&self) -> f64 {
        self.backlog_q.iter().sum()
    }

    /// Applies one slot and remembers its arrivals and service.
    pub fn step(&mut self, z: &[f64], phi: &[f64]) {
        self.backlog_q = step_queue(&self.backlog_q, z, phi);
        self.slot_arrivals_z = z.to_vec();
        self.slot_service_phi = phi.to_vec();
    }
}

/// Offloaded bytes per type: `Z_k = Σ_n ω_nk |D_nk|`.
pub fn arrivals(actions: &ActionMatrix, tasks: &TaskMatrix) -> Result<Vec<f64>, QueueError> {
    let (n, k) = actions.shape();
    if (n, k) != (tasks.n_vehicles(), tasks.n_types()) {
        return Err(QueueError::ShapeMismatch {
            actions: (n, k),
            tasks: (tasks.n_vehicles(), tasks.n_types()),
        });
    }
    Ok((0..k)
        .map(|kk| (0..n).map(|nn| actions.omega(nn, kk) * tasks.size(nn, kk)).sum())
        .collect())
}

/// Bytes served per type in one slot: `f_E Σ_n α_nk / c_k · dt`.
pub fn service(actions: &ActionMatrix, fe: f64, ck: &[f64], dt: f64) -> Vec<f64> {
    service_rate(actions, fe, ck).into_iter().map(|r| r * dt).collect()
}

/// Service rate per type, bytes/s.
pub fn service_rate(actions: &ActionMatrix, fe: f64, ck: &[f64]) -> Vec<f64> {
    actions
        .alpha_type_sums()
        .iter()
        .zip(ck)
        .map(|(a, c)| fe * a / c)
        .collect()
}

/// `q' = max(0, q + Z − φ)` elementwise.
pub fn step_queue(q: &[f64], z: &[f64], phi: &[f64]) -> Vec<f64> {
    q.iter()
        .zip(z)
        .zip(phi)
        .map(|((q, z), p)| (q + z - p).max(0.0))
        .collect()
}

pub fn lyapunov_value(q: &[f64]) -> f64 {
    0.5 * q.iter().map(|x| x * x).sum::<f64>()
}

/// One realisation of the conditional drift, `L(q_next) − L(q_t)`.
pub fn drift_sample(q_t: &[f64], q_next: &[f64]) -> f64 {
    lyapunov_value(q_next) - lyapunov_value(q_t)
}

/// Right-hand side of the exact one-slot drift inequality,
/// `½ Σ (Z − φ)² + Σ q (Z − φ)`.
pub fn one_slot_drift_bound(q: &[f64], z: &[f64], phi: &[f64]) -> f64 {
    q.iter()
        .zip(z)
        .zip(phi)
        .map(|((q, z), p)| {
            let d = z - p;
            0.5 * d * d + q * d
        })
        .sum()
}

/// `B = ½ Σ_k (Zmax_k² − (f_E / c_k)²)`. Negative at the default scale.
#[allow(non_snake_case)]
pub fn drift_bound_B(zmax: &[f64], fe: f64, ck: &[f64]) -> f64 {
    0.5 * zmax
        .iter()
        .zip(ck)
        .map(|(z, c)| z * z - (fe / c).powi(2))
        .sum::<f64>()
}

/// One row of the backlog history; `q` is the backlog after the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklogRecord {
    pub slot: u64,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Time-averaged total backlog, bytes.
    pub time_avg_backlog: f64,
    /// Least-squares slope of the total backlog over the last half, bytes/slot.
    pub tail_slope: f64,
    /// Mean total arrivals, bytes/slot.
    pub mean_arrivals: f64,
    pub bound_b: f64,
    /// Time average of `min_k (φ_k − Z_k)`, bytes/slot.
    pub epsilon: f64,
    /// `B / ε`, only defined for a positive ε.
    pub bound_b_over_eps: Option<f64>,
    pub stable: bool,
}

pub const MIN_HISTORY: usize = 10;

/// Ordinary least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn least_squares_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (y - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Finite-horizon stability diagnostics. STABLE means the tail slope of the
/// total backlog is at most 1% of the mean per-slot arrivals.
pub fn stability_report(history: &[BacklogRecord], bound_b: f64) -> Result<StabilityReport, QueueError> {
    if history.len() < MIN_HISTORY {
        return Err(QueueError::HistoryTooShort {
            needed: MIN_HISTORY,
            got: history.len(),
        });
    }
    let len = history.len() as f64;
    let totals: Vec<f64> = history.iter().map(|r| r.q.iter().sum()).collect();
    let time_avg_backlog = totals.iter().sum::<f64>() / len;
    let tail_slope = least_squares_slope(&totals[history.len() / 2..]);
    let mean_arrivals = history.iter().map(|r| r.z.iter().sum::<f64>()).sum::<f64>() / len;
    let epsilon = history
        .iter()
        .map(|r| {
            r.phi
                .iter()
                .zip(&r.z)
                .map(|(p, z)| p - z)
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / len;
    Ok(StabilityReport {
        time_avg_backlog,
        tail_slope,
        mean_arrivals,
        bound_b,
        epsilon,
        bound_b_over_eps: (epsilon > 0.0).then(|| bound_b / epsilon),
        stable: tail_slope <= 0.01 * mean_arrivals,
    })
}
