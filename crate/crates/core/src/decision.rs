//! The joint decision variable, the two per-slot objectives, constraint checks,
//! projection onto the feasible set and the learner reward.

use ndarray::{Array2, ArrayViewMut, Dimension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SlotMetrics;
use crate::queueing::{self, QueueState};
use crate::scenario::{TaskMatrix, TwinModel};

/// Relative slack under which a point counts as already feasible.
const FEASIBLE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("omega is {omega:?} but alpha is {alpha:?}")]
    ShapeMismatch {
        omega: (usize, usize),
        alpha: (usize, usize),
    },
    #[error("action row has {got} columns, expected {expected}")]
    RowWidth { got: usize, expected: usize },
    #[error("action matrix contains a non-finite entry")]
    NonFinite,
    #[error("infeasible: the alpha floor needs {needed} of the server but only {budget} is available")]
    Infeasible { needed: f64, budget: f64 },
}

/// Offload ratios and resource fractions for every (vehicle, task type) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatrix {
    pub offload_omega: Array2<f64>,
    pub alloc_alpha: Array2<f64>,
}

impl ActionMatrix {
    pub fn new(offload_omega: Array2<f64>, alloc_alpha: Array2<f64>) -> Result<Self, DecisionError> {
        if offload_omega.dim() != alloc_alpha.dim() {
            return Err(DecisionError::ShapeMismatch {
                omega: offload_omega.dim(),
                alpha: alloc_alpha.dim(),
            });
        }
        Ok(Self {
            offload_omega,
            alloc_alpha,
        })
    }

    pub fn filled(n: usize, k: usize, omega: f64, alpha: f64) -> Self {
        Self {
            offload_omega: Array2::from_elem((n, k), omega),
            alloc_alpha: Array2::from_elem((n, k), alpha),
        }
    }

    /// `(N, K)`.
    pub fn shape(&self) -> (usize, usize) {
        self.offload_omega.dim()
    }

    pub fn omega(&self, n: usize, k: usize) -> f64 {
        self.offload_omega[[n, k]]
    }

    pub fn alpha(&self, n: usize, k: usize) -> f64 {
        self.alloc_alpha[[n, k]]
    }

    pub fn alpha_sum(&self) -> f64 {
        self.alloc_alpha.sum()
    }

    /// `Σ_n α_nk` for each type.
    pub fn alpha_type_sums(&self) -> Vec<f64> {
        self.alloc_alpha.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// One row per vehicle: ω columns first, then α columns.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.offload_omega
            .rows()
            .into_iter()
            .zip(self.alloc_alpha.rows())
            .map(|(w, a)| w.iter().chain(a.iter()).copied().collect())
            .collect()
    }

    /// Inverse of [`ActionMatrix::to_rows`].
    pub fn from_rows(rows: &[Vec<f64>], k: usize) -> Result<Self, DecisionError> {
        let n = rows.len();
        let mut omega = Array2::zeros((n, k));
        let mut alpha = Array2::zeros((n, k));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != 2 * k {
                return Err(DecisionError::RowWidth {
                    got: row.len(),
                    expected: 2 * k,
                });
            }
            for j in 0..k {
                omega[[i, j]] = row[j];
                alpha[[i, j]] = row[k + j];
            }
        }
        Ok(Self {
            offload_omega: omega,
            alloc_alpha: alpha,
        })
    }

    pub fn set_vehicle(&mut self, n: usize, omega: &[f64], alpha: &[f64]) {
        for (j, (&w, &a)) in omega.iter().zip(alpha).enumerate() {
            self.offload_omega[[n, j]] = w;
            self.alloc_alpha[[n, j]] = a;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.offload_omega.iter().chain(self.alloc_alpha.iter()).all(|x| x.is_finite())
    }
}

/// The N×K bias matrix held by the twins.
pub fn bias_matrix(twins: &[TwinModel]) -> Array2<f64> {
    let k = twins.first().map_or(0, |t| t.est_bias.len());
    Array2::from_shape_fn((twins.len(), k), |(n, kk)| twins[n].est_bias[kk])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintId {
    /// A pair finished after its deadline.
    Deadline { vehicle: usize, task_type: usize },
    /// Allocated plus bias frequency exceeds the server.
    ServerCapacity,
    /// An offload ratio lies outside `[0, 1]`.
    OffloadRange { vehicle: usize, task_type: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub id: ConstraintId,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub p1: f64,
    pub p2: f64,
    pub drift_penalty_term: f64,
    pub constraint_violations: Vec<Violation>,
}

/// `−U_sys + E_sys`.
pub fn p1_objective(metrics: &SlotMetrics) -> f64 {
    -metrics.qos_system + metrics.e_system
}

/// `β Σ_k q_k (Z_k − f_E Σ_n α_nk / c_k)`. The service term is the rate as
/// the objective is written, not the per-slot byte count.
pub fn drift_penalty_term(q: &[f64], z: &[f64], actions: &ActionMatrix, beta: f64, fe: f64, ck: &[f64]) -> f64 {
    let rate = queueing::service_rate(actions, fe, ck);
    beta * q.iter().zip(z).zip(&rate).map(|((q, z), r)| q * (z - r)).sum::<f64>()
}

/// Drift-plus-penalty objective using the backlog at the start of the slot.
pub fn p2_objective(
    queue: &QueueState,
    actions: &ActionMatrix,
    tasks: &TaskMatrix,
    metrics: &SlotMetrics,
    beta: f64,
    fe: f64,
    ck: &[f64],
) -> Result<ObjectiveValue, queueing::QueueError> {
    let z = queueing::arrivals(actions, tasks)?;
    let drift = drift_penalty_term(&queue.backlog_q, &z, actions, beta, fe, ck);
    let p1 = p1_objective(metrics);
    Ok(ObjectiveValue {
        p1,
        p2: drift + p1,
        drift_penalty_term: drift,
        constraint_violations: Vec::new(),
    })
}

/// Deadline, server-capacity and offload-range checks. Violations are data.
pub fn check_constraints(
    actions: &ActionMatrix,
    metrics: Option<&SlotMetrics>,
    bias: &Array2<f64>,
    fe: f64,
    tmax: &[f64],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let (n, k) = actions.shape();
    if let Some(m) = metrics {
        for nn in 0..n {
            for kk in 0..k {
                let over = m.total_delay[[nn, kk]] - tmax[kk];
                if over > 0.0 {
                    out.push(Violation {
                        id: ConstraintId::Deadline {
                            vehicle: nn,
                            task_type: kk,
                        },
                        magnitude: over,
                    });
                }
            }
        }
    }
    let used = actions.alpha_sum() * fe + bias.sum();
    if used > fe * (1.0 + FEASIBLE_RTOL) {
        out.push(Violation {
            id: ConstraintId::ServerCapacity,
            magnitude: used - fe,
        });
    }
    for ((nn, kk), &w) in actions.offload_omega.indexed_iter() {
        let off = if w < 0.0 { -w } else { w - 1.0 };
        if off > 0.0 {
            out.push(Violation {
                id: ConstraintId::OffloadRange {
                    vehicle: nn,
                    task_type: kk,
                },
                magnitude: off,
            });
        }
    }
    out
}

/// Pulls the α entries above the floor towards it until `Σ ≤ cap`.
fn shrink_above_floor<D: Dimension>(mut alphas: ArrayViewMut<f64, D>, floor: f64, cap: f64) {
    let count = alphas.len() as f64;
    let sum = alphas.sum();
    if sum <= cap * (1.0 + FEASIBLE_RTOL) {
        return;
    }
    let s = (cap - count * floor) / (sum - count * floor);
    alphas.mapv_inplace(|a| floor + s * (a - floor));
}

/// Projects a raw decision onto the feasible set.
///
/// ω is clipped to `[0, 1]` and α raised to `alpha_min`. If a type's fractions
/// sum above 1, or all fractions sum above `1 − Σ Δf / f_E`, the excess over
/// the floor is scaled down so the bound holds with equality. Feasible points
/// come back unchanged, so the map is idempotent.
pub fn project_feasible(
    raw: &ActionMatrix,
    bias: &Array2<f64>,
    fe: f64,
    alpha_min: f64,
) -> Result<ActionMatrix, DecisionError> {
    if !raw.is_finite() {
        return Err(DecisionError::NonFinite);
    }
    let (n, k) = raw.shape();
    let budget = 1.0 - bias.sum() / fe;
    let per_type_floor = n as f64 * alpha_min;
    let total_floor = (n * k) as f64 * alpha_min;
    if per_type_floor > 1.0 * (1.0 + FEASIBLE_RTOL) {
        return Err(DecisionError::Infeasible {
            needed: per_type_floor,
            budget: 1.0,
        });
    }
    if total_floor > budget * (1.0 + FEASIBLE_RTOL) {
        return Err(DecisionError::Infeasible {
            needed: total_floor,
            budget,
        });
    }
    let mut out = raw.clone();
    out.offload_omega.mapv_inplace(|w| w.clamp(0.0, 1.0));
    out.alloc_alpha.mapv_inplace(|a| a.max(alpha_min));
    for col in out.alloc_alpha.columns_mut() {
        shrink_above_floor(col, alpha_min, 1.0);
    }
    shrink_above_floor(out.alloc_alpha.view_mut(), alpha_min, budget);
    Ok(out)
}

/// `U_n − η (f_E − (Σ α f_E + Σ Δf))`.
pub fn reward(u_ave_n: f64, actions: &ActionMatrix, bias: &Array2<f64>, fe: f64, eta: f64) -> f64 {
    u_ave_n - eta * (fe - (actions.alpha_sum() * fe + bias.sum()))
}

/// `Σ_i γ^i r_i`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn metrics(qos: f64, energy: f64) -> SlotMetrics {
        let z = Array2::zeros((1, 1));
        SlotMetrics {
            local_delay: z.clone(),
            edge_delay: z.clone(),
            bias_delay: z.clone(),
            total_delay: z.clone(),
            qos_task: z,
            qos_vehicle: vec![qos],
            qos_system: qos,
            e_local: energy,
            e_edge: 0.0,
            e_system: energy,
        }
    }

    #[test]
    fn p1_examples() {
        assert_eq!(p1_objective(&metrics(0.0, 0.0)), 0.0);
        assert_eq!(p1_objective(&metrics(1.0, 0.5)), -0.5);
    }

    #[test]
    fn p2_reduces_to_p1() {
        let tasks = TaskMatrix::from_sizes(&[vec![1000.0]], &[0.15]);
        let a = ActionMatrix::filled(1, 1, 1.0, 0.1);
        let m = metrics(0.3, 0.2);
        let empty = QueueState::new(1);
        let v = p2_objective(&empty, &a, &tasks, &m, 1.0, 400e9, &[0.25e6]).unwrap();
        assert_eq!(v.p2, v.p1);
        let mut q = QueueState::new(1);
        q.backlog_q = vec![5e5];
        let v = p2_objective(&q, &a, &tasks, &m, 0.0, 400e9, &[0.25e6]).unwrap();
        assert_eq!(v.p2, v.p1);
    }

    #[test]
    fn drift_term_example() {
        // Σα = 1 gives f_E Σα / c_k = 1.6e6 bytes/s
        let a = ActionMatrix::filled(10, 1, 1.0, 0.1);
        let d = drift_penalty_term(&[1e6], &[15000.0], &a, 1.0, 400e9, &[0.25e6]);
        assert!((d - (-1.585e12)).abs() <= 1e-9 * 1.585e12);
    }

    #[test]
    fn p2_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let tasks = TaskMatrix::from_sizes(&vec![vec![rng.random_range(1000.0..1500.0); 2]; 3], &[0.15; 2]);
            let a = ActionMatrix::filled(3, 2, rng.random(), rng.random_range(0.005..0.15));
            let mut q = QueueState::new(2);
            q.backlog_q = vec![rng.random_range(0.0..1e6), rng.random_range(0.0..1e6)];
            let m = metrics(rng.random_range(-1.0..1.0), rng.random_range(0.0..5.0));
            let v = p2_objective(&q, &a, &tasks, &m, rng.random_range(0.0..2.0), 400e9, &[0.25e6; 2]).unwrap();
            let sum = v.drift_penalty_term + v.p1;
            assert!((v.p2 - sum).abs() <= 1e-12 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn zero_actions_only_violate_deadlines() {
        let a = ActionMatrix::filled(2, 2, 0.0, 0.0);
        let mut m = metrics(0.0, 0.0);
        m.total_delay = Array2::from_elem((2, 2), 0.2);
        let v = check_constraints(&a, Some(&m), &Array2::zeros((2, 2)), 400e9, &[0.15, 0.15]);
        assert_eq!(v.len(), 4);
        assert!(v.iter().all(|x| matches!(x.id, ConstraintId::Deadline { .. })));
    }

    #[test]
    fn capacity_violation_magnitude() {
        let mut a = ActionMatrix::filled(1, 2, 0.5, 0.5);
        a.alloc_alpha[[0, 1]] = 0.51;
        let v = check_constraints(&a, None, &Array2::zeros((1, 2)), 400e9, &[0.15; 2]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id, ConstraintId::ServerCapacity);
        assert!((v[0].magnitude - 0.01 * 400e9).abs() <= 1e-6 * 4e9);
    }

    #[test]
    fn offload_range_violation() {
        let mut a = ActionMatrix::filled(2, 1, 0.5, 0.1);
        a.offload_omega[[1, 0]] = 1.2;
        let v = check_constraints(&a, None, &Array2::zeros((2, 1)), 400e9, &[0.15]);
        assert_eq!(v.len(), 1);
        assert_eq!(
            v[0].id,
            ConstraintId::OffloadRange {
                vehicle: 1,
                task_type: 0
            }
        );
        assert!((v[0].magnitude - 0.2).abs() < 1e-12);
    }

    #[test]
    fn projection_keeps_feasible_points() {
        let mut a = ActionMatrix::filled(10, 3, 0.4, 0.02);
        a.alloc_alpha[[3, 1]] = 0.1;
        let p = project_feasible(&a, &Array2::zeros((10, 3)), 400e9, 0.005).unwrap();
        assert_eq!(p, a);
    }

    #[test]
    fn projection_example_equal_split() {
        let a = ActionMatrix::filled(10, 3, 0.5, 0.2);
        let p = project_feasible(&a, &Array2::zeros((10, 3)), 400e9, 0.005).unwrap();
        assert!((p.alpha_sum() - 1.0).abs() < 1e-12);
        assert!(p.alloc_alpha.iter().all(|x| (x - 1.0 / 30.0).abs() < 1e-12));
    }

    #[test]
    fn projection_clips_and_respects_bias_budget() {
        let mut a = ActionMatrix::filled(4, 2, 1.5, 0.3);
        a.offload_omega[[0, 0]] = -0.2;
        a.alloc_alpha[[1, 1]] = -1.0;
        let bias = Array2::from_elem((4, 2), 5e8);
        let p = project_feasible(&a, &bias, 400e9, 0.005).unwrap();
        assert_eq!(p.omega(0, 0), 0.0);
        assert_eq!(p.omega(0, 1), 1.0);
        assert!(p.alloc_alpha.iter().all(|&x| x >= 0.005));
        assert!(p.alpha_type_sums().iter().all(|&s| s <= 1.0 + 1e-12));
        let budget = 1.0 - 8.0 * 5e8 / 400e9;
        assert!((p.alpha_sum() - budget).abs() < 1e-12);
        assert!(check_constraints(&p, None, &bias, 400e9, &[0.15; 2]).is_empty());
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let omega = Array2::from_shape_fn((10, 3), |_| rng.random_range(-0.5..1.5));
            let alpha = Array2::from_shape_fn((10, 3), |_| rng.random_range(-0.1..0.5));
            let bias = Array2::from_elem((10, 3), rng.random_range(-5e8..5e8));
            let raw = ActionMatrix::new(omega, alpha).unwrap();
            let once = project_feasible(&raw, &bias, 400e9, 0.005).unwrap();
            let twice = project_feasible(&once, &bias, 400e9, 0.005).unwrap();
            assert_eq!(once, twice);
            for (r, p) in raw.alloc_alpha.iter().zip(once.alloc_alpha.iter()) {
                assert!(*p <= r.max(0.005));
            }
        }
    }

    #[test]
    fn projection_infeasible_floor() {
        let a = ActionMatrix::filled(100, 3, 0.5, 0.1);
        let err = project_feasible(&a, &Array2::zeros((100, 3)), 400e9, 0.005).unwrap_err();
        assert!(matches!(err, DecisionError::Infeasible { .. }));
        let a = ActionMatrix::filled(10, 3, 0.5, 0.1);
        let bias = Array2::from_elem((10, 3), 1.2e10);
        assert!(project_feasible(&a, &bias, 400e9, 0.005).is_err());
        assert_eq!(
            project_feasible(&ActionMatrix::filled(1, 1, f64::NAN, 0.1), &Array2::zeros((1, 1)), 400e9, 0.005),
            Err(DecisionError::NonFinite)
        );
    }

    #[test]
    fn reward_examples() {
        let zero = Array2::zeros((2, 2));
        let full = ActionMatrix::filled(2, 2, 1.0, 0.25);
        assert!((reward(0.8, &full, &zero, 400e9, 1.0 / 400e9) - 0.8).abs() < 1e-12);
        let part = ActionMatrix::filled(2, 2, 1.0, 0.225);
        assert_eq!(reward(0.8, &part, &zero, 400e9, 0.0), 0.8);
        assert!((reward(0.8, &part, &zero, 400e9, 1.0 / 400e9) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[3.5], 0.95), 3.5);
        assert!((discounted_return(&[1.0, 1.0], 0.95) - 1.95).abs() < 1e-12);
        let long = discounted_return(&[2.0; 200], 0.95);
        assert!((long - 2.0 / 0.05).abs() <= 0.01 * 40.0);
    }

    #[test]
    fn rows_round_trip() {
        let mut a = ActionMatrix::filled(2, 3, 0.1, 0.02);
        a.set_vehicle(1, &[0.3, 0.4, 0.5], &[0.06, 0.07, 0.08]);
        let rows = a.to_rows();
        assert_eq!(rows[1], vec![0.3, 0.4, 0.5, 0.06, 0.07, 0.08]);
        assert_eq!(ActionMatrix::from_rows(&rows, 3).unwrap(), a);
        assert!(ActionMatrix::from_rows(&rows, 2).is_err());
    }
}
