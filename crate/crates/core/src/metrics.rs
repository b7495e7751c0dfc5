//! Delay, QoS and energy of one slot.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::decision::ActionMatrix;
use crate::scenario::TaskMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("effective server frequency {effective} cycles/s is not positive (alpha*fE = {allocated}, bias = {bias})")]
    Singularity {
        effective: f64,
        allocated: f64,
        bias: f64,
    },
    #[error("uplink rate is {0} bits/s; transmission delay is undefined")]
    ZeroRate(f64),
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// Local processing time of the `(1 − ω)` share, s.
pub fn local_delay(omega: f64, size_bytes: f64, ck: f64, fv: f64) -> f64 {
    (1.0 - omega) * size_bytes * ck / fv
}

/// Correction for the gap between twin-estimated and actual server frequency.
/// Zero offloaded work means zero correction, without any frequency check.
pub fn bias_delay(omega: f64, size_bytes: f64, ck: f64, alpha: f64, fe: f64, df: f64) -> Result<f64, MetricsError> {
    if omega == 0.0 {
        return Ok(0.0);
    }
    let allocated = alpha * fe;
    let effective = allocated + df;
    if !(allocated > 0.0) || !(effective > 0.0) {
        return Err(MetricsError::Singularity {
            effective,
            allocated,
            bias: df,
        });
    }
    Ok(-omega * size_bytes * ck * df / (allocated * effective))
}

/// Upload plus edge processing plus bias correction, s.
///
/// The upload carries the whole task unless `tx_scaled_by_omega` is set.
#[allow(clippy::too_many_arguments)]
pub fn edge_delay(
    size_bytes: f64,
    rate: f64,
    omega: f64,
    ck: f64,
    alpha: f64,
    fe: f64,
    df: f64,
    tx_scaled_by_omega: bool,
) -> Result<f64, MetricsError> {
    if !(rate > 0.0) {
        return Err(MetricsError::ZeroRate(rate));
    }
    let tx_bytes = if tx_scaled_by_omega { omega * size_bytes } else { size_bytes };
    let tx = 8.0 * tx_bytes / rate;
    let processing = if omega == 0.0 { 0.0 } else { omega * size_bytes * ck / (alpha * fe) };
    Ok(tx + processing + bias_delay(omega, size_bytes, ck, alpha, fe, df)?)
}

pub fn total_delay(local: f64, edge: f64) -> f64 {
    local + edge
}

/// `1 − t / Tmax`; negative once the deadline is missed.
pub fn qos_task(delay: f64, tmax: f64) -> f64 {
    1.0 - delay / tmax
}

pub fn qos_vehicle(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

pub fn qos_system(per_vehicle: &[f64]) -> f64 {
    per_vehicle.iter().sum::<f64>() / per_vehicle.len() as f64
}

/// `Σ fv³ κ_ve t_local`, J.
pub fn local_energy(local_delays: &Array2<f64>, fv: f64, kappa_ve: f64) -> f64 {
    fv.powi(3) * kappa_ve * local_delays.sum()
}

/// Server power at the frequency implied by `Σα`, times the slot length, J.
pub fn edge_energy(alpha_sum: f64, fe: f64, n_cores: usize, kappa_se: f64, dt: f64) -> f64 {
    let ne = n_cores as f64;
    ne * kappa_se * (fe * alpha_sum / ne).powi(3) * dt
}

pub fn system_energy(e_local: f64, e_edge: f64) -> f64 {
    e_local + e_edge
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub local_delay: Array2<f64>,
    pub edge_delay: Array2<f64>,
    pub bias_delay: Array2<f64>,
    pub total_delay: Array2<f64>,
    pub qos_task: Array2<f64>,
    pub qos_vehicle: Vec<f64>,
    pub qos_system: f64,
    pub e_local: f64,
    pub e_edge: f64,
    pub e_system: f64,
}

impl SlotMetrics {
    pub fn mean_delay(&self) -> f64 {
        self.total_delay.mean().unwrap_or(0.0)
    }
}

/// Evaluates every delay, QoS and energy term for one slot.
///
/// `rates` holds one uplink rate per vehicle; `bias` is the N×K twin bias.
pub fn compute_slot_metrics(
    config: &SimConfig,
    actions: &ActionMatrix,
    tasks: &TaskMatrix,
    rates: &[f64],
    bias: &Array2<f64>,
) -> Result<SlotMetrics, MetricsError> {
    let (n, k) = actions.shape();
    let check = |what, got: (usize, usize)| {
        if got == (n, k) {
            Ok(())
        } else {
            Err(MetricsError::Shape {
                what,
                got,
                expected: (n, k),
            })
        }
    };
    check("tasks", (tasks.n_vehicles(), tasks.n_types()))?;
    check("bias", bias.dim())?;
    check("rates", (rates.len(), k))?;

    let mut local = Array2::zeros((n, k));
    let mut edge = Array2::zeros((n, k));
    let mut corr = Array2::zeros((n, k));
    let mut total = Array2::zeros((n, k));
    let mut qos = Array2::zeros((n, k));
    let fe = config.server_cpu_fe;
    for nn in 0..n {
        for kk in 0..k {
            let task = tasks.get(nn, kk);
            let (w, a, df) = (actions.omega(nn, kk), actions.alpha(nn, kk), bias[[nn, kk]]);
            let ck = config.cycles_per_byte_ck[kk];
            let l = local_delay(w, task.size_bytes, ck, config.vehicle_cpu_fv);
            let e = edge_delay(task.size_bytes, rates[nn], w, ck, a, fe, df, config.tx_scaled_by_omega)?;
            let t = total_delay(l, e);
            local[[nn, kk]] = l;
            edge[[nn, kk]] = e;
            corr[[nn, kk]] = bias_delay(w, task.size_bytes, ck, a, fe, df)?;
            total[[nn, kk]] = t;
            qos[[nn, kk]] = qos_task(t, task.max_delay);
        }
    }
    let qos_vehicle: Vec<f64> = qos.rows().into_iter().map(|r| qos_vehicle(r.as_slice().unwrap())).collect();
    let e_local = local_energy(&local, config.vehicle_cpu_fv, config.kappa_ve);
    let e_edge = edge_energy(actions.alpha_sum(), fe, config.n_cores_ne, config.kappa_se, config.slot_dt);
    Ok(SlotMetrics {
        local_delay: local,
        edge_delay: edge,
        bias_delay: corr,
        total_delay: total,
        qos_task: qos,
        qos_system: qos_system(&qos_vehicle),
        qos_vehicle,
        e_local,
        e_edge,
        e_system: system_energy(e_local, e_edge),
    })
}
