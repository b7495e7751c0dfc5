//! Shared fixtures for the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtvec_core::harness::collect_cases;
use dtvec_core::learners::{Activation, FixedPolicy, Mlp};
use dtvec_core::llm::CaseSet;
use dtvec_core::SimConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Actor with the learner's default hidden widths.
pub fn actor(rng: &mut ChaCha8Rng, obs: usize, actions: usize) -> Mlp {
    let acts = [Activation::Relu, Activation::Relu, Activation::Tanh];
    Mlp::new(&[obs, 64, 64, 64, actions], &acts, 0.01, rng)
}

/// Case set recorded from a fixed policy on the default scenario.
pub fn recorded_cases(slots: usize) -> CaseSet {
    collect_cases(&SimConfig::default(), &mut FixedPolicy::new(0.5, 0.02), slots).expect("recording cases")
}

pub fn state_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
