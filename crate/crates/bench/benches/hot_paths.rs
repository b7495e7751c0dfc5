use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use dtvec_bench::{actor, recorded_cases, rng, state_rows, uniform_matrix};
use dtvec_core::decision::{project_feasible, ActionMatrix};
use dtvec_core::harness::episode::run_slot;
use dtvec_core::learners::maddpg::actor_pg_loss_grad;
use dtvec_core::learners::{Optimizer, OptimizerKind, UniformPolicy};
use dtvec_core::llm::build_prompt;
use dtvec_core::scenario::init_scenario;
use dtvec_core::SimConfig;
use rand::Rng;

fn slot_step(c: &mut Criterion) {
    let mut sc = init_scenario(SimConfig::default()).unwrap();
    c.bench_function("slot step, 10 vehicles, uniform", |b| {
        b.iter(|| black_box(run_slot(&mut sc, &mut UniformPolicy).unwrap()))
    });
}

fn projection(c: &mut Criterion) {
    let mut r = rng(1);
    let raw = ActionMatrix::new(uniform_matrix(&mut r, 10, 3, -0.2, 1.2), uniform_matrix(&mut r, 10, 3, 0.0, 0.2)).unwrap();
    let bias = uniform_matrix(&mut r, 10, 3, -5e8, 5e8);
    c.bench_function("feasibility projection 10x3", |b| {
        b.iter(|| black_box(project_feasible(black_box(&raw), &bias, 400e9, 0.005).unwrap()))
    });
}

fn prompt(c: &mut Criterion) {
    let cases = recorded_cases(500);
    let mut r = rng(2);
    let state = state_rows(&uniform_matrix(&mut r, 10, 5, 0.0, 1.0));
    c.bench_function("prompt build, 500 cases, 6000 tokens", |b| {
        b.iter(|| black_box(build_prompt(&cases, &state, 6000, false).unwrap()))
    });
}

fn actor_paths(c: &mut Criterion) {
    let mut r = rng(3);
    let net = actor(&mut r, 12, 27_000);
    let obs = uniform_matrix(&mut r, 64, 12, -1.0, 1.0);
    c.bench_function("actor forward, batch 64, 27000 actions", |b| b.iter(|| black_box(net.forward(&obs))));

    let acts: Vec<usize> = (0..64).map(|_| r.random_range(0..27_000)).collect();
    let adv: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
    c.bench_function("actor train step, batch 64, 27000 actions", |b| {
        b.iter_batched(
            || (net.clone(), Optimizer::new(OptimizerKind::Adam, &net, 1e-4, 1e-8)),
            |(mut n, mut opt)| {
                let (_, g) = actor_pg_loss_grad(&n, &obs, &acts, &adv, 0.03);
                opt.step(&mut n, &g);
                n
            },
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = slot_step, projection, prompt, actor_paths
}
criterion_main!(benches);
