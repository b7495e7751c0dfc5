//! Randomised checks of the model invariants.

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtvec_core::channel::{channel_gain, transmission_rate};
use dtvec_core::decision::{self, ActionMatrix};
use dtvec_core::harness::episode::{prepare_slot, run_slot};
use dtvec_core::harness::{collect_cases, run_episode};
use dtvec_core::learners::nn::{soft_update, softmax_rows};
use dtvec_core::learners::{Activation, Codebook, Mlp, UniformPolicy};
use dtvec_core::llm::parse::parse_action_matrix;
use dtvec_core::llm::prompt::render_matrix;
use dtvec_core::llm::{build_prompt, decide, CaseRecord, LlmConfig, ScriptedBackend};
use dtvec_core::metrics::{edge_delay, qos_task};
use dtvec_core::queueing::{drift_sample, one_slot_drift_bound, step_queue};
use dtvec_core::scenario::init_scenario;
use dtvec_core::SimConfig;

const FE: f64 = 400e9;
const ALPHA_MIN: f64 = 0.005;

fn matrix(n: usize, k: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, n * k).prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap())
}

fn raw_action(n: usize, k: usize) -> impl Strategy<Value = ActionMatrix> {
    (matrix(n, k, -0.5, 1.5), matrix(n, k, 0.0, 1.0)).prop_map(|(w, a)| ActionMatrix::new(w, a).unwrap())
}

fn shaped_action() -> impl Strategy<Value = (ActionMatrix, Array2<f64>)> {
    (1usize..7, 1usize..4).prop_flat_map(|(n, k)| (raw_action(n, k), matrix(n, k, -1e9, 1e9)))
}

fn feasible_action(n: usize, k: usize) -> impl Strategy<Value = ActionMatrix> {
    raw_action(n, k).prop_map(|a| decision::project_feasible(&a, &Array2::zeros(a.shape()), FE, ALPHA_MIN).unwrap())
}

fn assert_feasible(a: &ActionMatrix, bias: &Array2<f64>) {
    let tol = 1e-9;
    assert!(a.offload_omega.iter().all(|w| (0.0..=1.0).contains(w)));
    assert!(a.alloc_alpha.iter().all(|&x| x >= ALPHA_MIN));
    for col in a.alloc_alpha.columns() {
        assert!(col.sum() <= 1.0 + tol);
    }
    assert!(a.alpha_sum() * FE + bias.sum() <= FE * (1.0 + tol));
}

fn rows(a: &ActionMatrix) -> Vec<Vec<f64>> {
    let (n, k) = a.shape();
    (0..n)
        .map(|i| (0..k).map(|j| a.offload_omega[[i, j]]).chain((0..k).map(|j| a.alloc_alpha[[i, j]])).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn step_queue_stays_nonnegative(
        q in prop::collection::vec(0.0..1e6f64, 1..5),
        z in prop::collection::vec(-1e6..1e6f64, 5),
        phi in prop::collection::vec(-1e6..1e6f64, 5),
    ) {
        let next = step_queue(&q, &z[..q.len()], &phi[..q.len()]);
        prop_assert!(next.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn one_slot_drift_is_bounded(
        q in prop::collection::vec(0.0..1e5f64, 3),
        z in prop::collection::vec(0.0..1e5f64, 3),
        phi in prop::collection::vec(0.0..1e5f64, 3),
    ) {
        let next = step_queue(&q, &z, &phi);
        let bound = one_slot_drift_bound(&q, &z, &phi);
        prop_assert!(drift_sample(&q, &next) <= bound + 1e-6 * bound.abs().max(1.0));
    }

    #[test]
    fn service_above_peak_arrivals_keeps_backlog_bounded(
        q0 in prop::collection::vec(0.0..1e4f64, 2),
        fracs in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 2), 1..50),
        excess in 0.0..1e3f64,
    ) {
        let zmax = [5e3, 8e3];
        let phi = [zmax[0] + excess, zmax[1] + excess];
        let mut q = q0.clone();
        for f in &fracs {
            let z = [f[0] * zmax[0], f[1] * zmax[1]];
            q = step_queue(&q, &z, &phi);
            for j in 0..2 {
                prop_assert!(q[j] <= q0[j] + zmax[j]);
            }
        }
    }

    #[test]
    fn edge_delay_matches_collapsed_form(
        size in 1.0..1e4f64,
        rate in 1e3..1e9f64,
        omega in 0.001..=1.0f64,
        ck in 1.0..1e6f64,
        alpha in ALPHA_MIN..=1.0,
        frac in -0.9..0.9f64,
    ) {
        let df = frac * alpha * FE;
        let collapsed = 8.0 * size / rate + omega * size * ck / (alpha * FE + df);
        let d = edge_delay(size, rate, omega, ck, alpha, FE, df, false).unwrap();
        prop_assert!((d - collapsed).abs() <= 1e-12 * collapsed.abs());
    }

    #[test]
    fn qos_never_exceeds_one(delay in 0.0..1e3f64, tmax in 1e-6..10.0f64) {
        prop_assert!(qos_task(delay, tmax) <= 1.0);
    }

    #[test]
    fn gain_is_nonnegative_and_rate_monotone(
        re in -10.0..10.0f64,
        im in -10.0..10.0f64,
        h in 0.0..1e-3f64,
        g in 1e-15..1e-6f64,
        p in 1e-3..1.0f64,
        rho2 in 1e-16..1e-12f64,
        up in 1.01..10.0f64,
    ) {
        prop_assert!(channel_gain(num_complex::Complex64::new(re, im), h) >= 0.0);
        let r = transmission_rate(20e6, p, g, rho2);
        prop_assert!(transmission_rate(20e6, p, g * up, rho2) > r);
        prop_assert!(transmission_rate(20e6, p * up, g, rho2) > r);
        prop_assert!(transmission_rate(20e6, p, g, rho2 * up) < r);
    }

    #[test]
    fn projection_is_feasible_idempotent_and_never_raises_alpha((raw, bias) in shaped_action()) {
        let p = decision::project_feasible(&raw, &bias, FE, ALPHA_MIN).unwrap();
        assert_feasible(&p, &bias);
        prop_assert_eq!(&decision::project_feasible(&p, &bias, FE, ALPHA_MIN).unwrap(), &p);
        for (r, q) in raw.alloc_alpha.iter().zip(p.alloc_alpha.iter()) {
            if *r >= ALPHA_MIN {
                prop_assert!(q <= r);
            }
        }
    }

    #[test]
    fn reward_ignores_vehicle_order((a, bias) in shaped_action(), u in -1.0..1.0f64, shift in 0usize..7) {
        let n = a.shape().0;
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permute = |m: &Array2<f64>| m.select(ndarray::Axis(0), &perm);
        let b = ActionMatrix::new(permute(&a.offload_omega), permute(&a.alloc_alpha)).unwrap();
        let r1 = decision::reward(u, &a, &bias, FE, 1e-11);
        let r2 = decision::reward(u, &b, &permute(&bias), FE, 1e-11);
        prop_assert!((r1 - r2).abs() <= 1e-12 * r1.abs().max(1.0));
    }

    #[test]
    fn softmax_rows_are_positive_distributions(logits in matrix(4, 30, -50.0, 50.0)) {
        let p = softmax_rows(&logits);
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn codebook_round_trip(i in 0usize..27_000) {
        let cb = Codebook::new(3);
        let (w, a) = cb.decode(i).unwrap();
        prop_assert_eq!(cb.encode(&w, &a).unwrap(), i);
    }

    #[test]
    fn parse_of_rendered_action_is_within_rounding(a in (1usize..6, 1usize..4).prop_flat_map(|(n, k)| feasible_action(n, k))) {
        let (n, k) = a.shape();
        let back = parse_action_matrix(&render_matrix(&rows(&a), Some(4)), n, k).unwrap();
        for (x, y) in rows(&a).concat().iter().zip(rows(&back).concat()) {
            prop_assert!((x - y).abs() <= 5e-5 + 1e-15, "{} vs {}", x, y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenario_stays_in_range_and_is_deterministic(seed in 0u64..1000, n in 1usize..6, k in 1usize..4) {
        let mut cfg = SimConfig::with_shape(n, k);
        cfg.seed = seed;
        let run = || {
            let mut sc = init_scenario(cfg.clone()).unwrap();
            let mut trace = Vec::new();
            for _ in 0..20 {
                let inputs = prepare_slot(&mut sc).unwrap();
                assert_eq!(inputs.tasks.iter().count(), n * k);
                for t in inputs.tasks.iter() {
                    assert!(t.size_bytes >= cfg.task_size_range.0 && t.size_bytes <= cfg.task_size_range.1);
                }
                run_slot(&mut sc, &mut UniformPolicy).unwrap();
                for v in &sc.vehicles {
                    assert!(v.position_l >= 0.0 && v.position_l < cfg.road_length);
                    trace.push(v.position_l);
                }
            }
            trace
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn slot_records_satisfy_drift_and_objective_identities(seed in 0u64..1000, n in 1usize..5) {
        let mut cfg = SimConfig::with_shape(n, 2);
        cfg.seed = seed;
        let r = run_episode(&cfg, &mut UniformPolicy, 30).unwrap();
        for s in &r.slots {
            prop_assert!(s.drift <= s.drift_bound + 1e-9 * s.drift_bound.abs().max(1.0));
            let o = &s.objective;
            prop_assert!((o.p2 - (o.drift_penalty_term + o.p1)).abs() <= 1e-12 * o.p2.abs().max(1.0));
            prop_assert!((o.p1 - (s.metrics.e_system - s.metrics.qos_system)).abs() <= 1e-12 * o.p1.abs().max(1.0));
        }
    }

    #[test]
    fn soft_update_never_widens_the_gap(seed in 0u64..1000, lambda in 0.0..=1.0f64, steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = [Activation::Relu, Activation::Relu, Activation::Tanh];
        let source = Mlp::new(&[3, 4, 4, 4, 2], &acts, 1.0, &mut rng);
        let mut target = Mlp::new(&[3, 4, 4, 4, 2], &acts, 1.0, &mut rng);
        let gap = |t: &Mlp| {
            t.layers.iter().zip(&source.layers).flat_map(|(a, b)| {
                a.w.iter().zip(b.w.iter()).chain(a.b.iter().zip(b.b.iter())).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
            }).fold(0.0, f64::max)
        };
        let initial = gap(&target);
        for _ in 0..steps {
            soft_update(&mut target, &source, lambda).unwrap();
            prop_assert!(gap(&target) <= initial);
        }
    }

    #[test]
    fn llm_decision_is_always_feasible(
        seed in 0u64..1000,
        replies in prop::collection::vec(
            prop_oneof![
                Just("no matrix here".to_string()),
                (matrix(3, 4, -2.0, 3.0)).prop_map(|m| render_matrix(
                    &m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(), None)),
                (matrix(2, 4, 0.0, 1.0)).prop_map(|m| render_matrix(
                    &m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(), Some(4))),
            ],
            3,
        ),
    ) {
        let mut cfg = SimConfig::with_shape(3, 2);
        cfg.seed = seed;
        let cases = collect_cases(&cfg, &mut UniformPolicy, 5).unwrap();
        let mut sc = init_scenario(cfg).unwrap();
        let inputs = prepare_slot(&mut sc).unwrap();
        let ctx = inputs.context(&sc);
        let mut backend = ScriptedBackend::new(replies);
        let d = decide(&ctx, &mut backend, &cases, &LlmConfig::default()).unwrap();
        assert_feasible(&d.action, ctx.bias);
    }

    #[test]
    fn prompt_is_pure_and_repeat_state_prefers_newest_case(seed in 0u64..1000, pick in 0usize..8) {
        let mut cfg = SimConfig::with_shape(2, 2);
        cfg.seed = seed;
        let mut cases = collect_cases(&cfg, &mut UniformPolicy, 8).unwrap();
        let old = cases.get(pick).unwrap().clone();
        let state = old.state.clone();
        let a = build_prompt(&cases, &state, 6000, false).unwrap();
        prop_assert_eq!(&a, &build_prompt(&cases, &state, 6000, false).unwrap());

        let st = Array2::from_shape_vec((state.len(), state[0].len()), state.concat()).unwrap();
        let action = ActionMatrix::new(Array2::from_elem((2, 2), 0.25), Array2::from_elem((2, 2), 0.1)).unwrap();
        cases.push(CaseRecord::new(&st, &action, None, 99));
        let best = cases.nearest(&state).unwrap();
        prop_assert_eq!(best.ts, 99);
    }
}
