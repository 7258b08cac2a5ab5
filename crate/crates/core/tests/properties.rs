mod common;

use mclq_core::env::{driving_game, driving_state, point_mass_game, point_mass_state, DrivingParams, PointMassParams};
use mclq_core::experiment::{spearman, welch_p, MetricSummary};
use mclq_core::filter::{filter_step, plan, FilterConfig};
use mclq_core::linalg::min_eigenvalue;
use mclq_core::mh::{perturb, within_margin};
use mclq_core::oracle::{best_human_response, brute_force_maxmin, brute_force_ne, DiscretizedGame};
use mclq_core::{
    refine, solve_coupled_riccati, ActionTrajectory, Beta, Bounds, GameDefinition, JointTrajectory, SamplerConfig,
    State,
};
use nalgebra::{dvector, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_point_mass(horizon: usize) -> GameDefinition {
    point_mass_game(&PointMassParams {
        horizon,
        ..PointMassParams::default()
    })
    .unwrap()
}

fn actions(horizon: usize, dim: usize, bound: f64) -> impl Strategy<Value = ActionTrajectory> {
    prop::collection::vec(prop::collection::vec(-bound..=bound, dim), horizon)
        .prop_map(|rows| ActionTrajectory::from_rows(&rows))
}

fn planar() -> impl Strategy<Value = [f64; 2]> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| [a, b])
}

fn point_mass_case(horizon: usize) -> impl Strategy<Value = (State, ActionTrajectory, ActionTrajectory)> {
    (planar(), planar(), actions(horizon, 2, 0.5), actions(horizon, 2, 0.5))
        .prop_map(|(r, h, u, w)| (point_mass_state(r, &[h]), u, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollout_has_one_more_state_than_actions((x0, u, w) in point_mass_case(6)) {
        let game = small_point_mass(6);
        let states = game.rollout(&JointTrajectory::new(x0, u, w).unwrap()).unwrap();
        prop_assert_eq!(states.len(), 7);
    }

    #[test]
    fn cost_is_bit_reproducible((x0, u, w) in point_mass_case(5)) {
        let game = small_point_mass(5);
        let a = game.cost_of(&x0, &u, &w).unwrap();
        let b = game.cost_of(&x0, &u, &w).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cost_splits_at_any_index((x0, u, w) in point_mass_case(6), split in 0usize..6) {
        let game = small_point_mass(6);
        let traj = JointTrajectory::new(x0.clone(), u.clone(), w.clone()).unwrap();
        let states = game.rollout(&traj).unwrap();
        let prefix: f64 = (0..split).map(|t| game.stage_cost(&states[t], &u[t], &w[t])).sum();
        let suffix_game = game.with_horizon(6 - split).unwrap();
        let tail = |a: &ActionTrajectory| ActionTrajectory::new(a.as_slice()[split..].to_vec());
        let suffix = suffix_game.cost_of(&states[split], &tail(&u), &tail(&w)).unwrap();
        let total = game.cost_of(&x0, &u, &w).unwrap();
        prop_assert!((total - (prefix + suffix)).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn cost_survives_a_json_round_trip((x0, u, w) in point_mass_case(4)) {
        let game = small_point_mass(4);
        let back: ActionTrajectory = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        prop_assert_eq!(game.cost_of(&x0, &u, &w).unwrap(), game.cost_of(&x0, &back, &w).unwrap());
    }

    #[test]
    fn driving_rollout_matches_repeated_steps(
        speed in 0.0..8.0f64,
        u in actions(5, 2, 0.5),
        w in actions(5, 2, 0.5),
    ) {
        let game = driving_game(&DrivingParams { horizon: 5, ..DrivingParams::default() }).unwrap();
        let x0 = driving_state([0.0, 0.0, 0.1, speed], [12.0, 0.5, 3.0, 3.0]);
        let states = game.rollout(&JointTrajectory::new(x0.clone(), u.clone(), w.clone()).unwrap()).unwrap();
        let mut x = x0;
        for t in 0..5 {
            x = game.step(&x, &u[t], &w[t]).unwrap();
            prop_assert_eq!(&x, &states[t + 1]);
        }
    }

    #[test]
    fn clamping_lands_inside_and_is_idempotent(
        limit in 0.1..5.0f64,
        a in prop::collection::vec(-20.0..20.0f64, 3),
    ) {
        let bounds = Bounds::symmetric(3, limit);
        let once = bounds.clamp(&DVector::from_vec(a));
        prop_assert!(bounds.contains(&once));
        prop_assert_eq!(bounds.clamp(&once), once);
    }

    #[test]
    fn margin_contains_the_nominal_and_grows_with_lambda(
        nominal in actions(4, 2, 1.0),
        other in actions(4, 2, 1.0),
        lambda in 0.0..10.0f64,
        extra in 0.0..10.0f64,
    ) {
        prop_assert!(within_margin(&nominal, &nominal, lambda));
        prop_assert!(within_margin(&nominal, &other, f64::INFINITY));
        if within_margin(&nominal, &other, lambda) {
            prop_assert!(within_margin(&nominal, &other, lambda + extra));
        }
    }

    #[test]
    fn perturbation_is_deterministic_and_vanishes_at_zero_scale(delta in actions(6, 2, 1.0), seed in any::<u64>()) {
        let a = perturb(&delta, &[0.3, 0.1], &mut ChaCha8Rng::seed_from_u64(seed));
        let b = perturb(&delta, &[0.3, 0.1], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
        prop_assert_eq!(perturb(&delta, &[0.0], &mut ChaCha8Rng::seed_from_u64(seed)), delta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn refine_respects_bounds_margin_and_reports_its_cost(
        robot in planar(),
        human in planar(),
        lambda in prop_oneof![Just(f64::INFINITY), 0.0..2.0f64],
        greedy in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let game = small_point_mass(8);
        let x0 = point_mass_state(robot, &[human]);
        let zeros = ActionTrajectory::zeros(8, 2);
        let start = JointTrajectory::new(x0, zeros.clone(), ActionTrajectory::from_rows(&vec![vec![0.3, -0.2]; 8])).unwrap();
        let cfg = SamplerConfig {
            beta: if greedy { Beta::Greedy } else { Beta::Finite(10.0) },
            outer_iters: 20,
            inner_iters: 5,
            lambda,
            seed,
            ..SamplerConfig::default()
        };
        let r = refine(&game, &start, &zeros, &cfg).unwrap();
        prop_assert_eq!(r.final_cost, game.cumulative_cost(&r.refined).unwrap());
        prop_assert!(game.robot_bounds().contains_all(r.robot()));
        prop_assert!(game.human_bounds().contains_all(r.worst_case_human()));
        prop_assert!(within_margin(&zeros, r.worst_case_human(), lambda));
        prop_assert_eq!(r.cost_trace.len(), 20);
        prop_assert_eq!(refine(&game, &start, &zeros, &cfg).unwrap(), r);
    }

    #[test]
    fn plan_never_does_worse_than_its_seed_against_the_same_human(robot in planar(), human in planar(), seed in any::<u64>()) {
        let game = small_point_mass(10);
        let x0 = point_mass_state(robot, &[human]);
        let cfg = FilterConfig {
            horizon: 10,
            sampler: SamplerConfig { beta: Beta::Greedy, outer_iters: 20, inner_iters: 5, seed, ..SamplerConfig::default() },
            ..FilterConfig::default()
        };
        let record = plan(&game, &x0, &cfg).unwrap();
        prop_assert!(record.refined_cost <= record.lq_cost);
        prop_assert!(record.ms_lq >= 0.0 && record.ms_mh >= 0.0);
        let (u, step_record) = filter_step(&game, &x0, &cfg, None, 0);
        prop_assert!(game.robot_bounds().contains(&u));
        prop_assert!(!step_record.is_error());
    }

    #[test]
    fn converged_schedules_have_psd_values_and_pass_the_eigen_guard(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lq = common::random_lq_game(&mut rng, 4, 8);
        let g = solve_coupled_riccati(&lq, 100, 1e-10).unwrap();
        prop_assert_eq!(&g.value[lq.horizon()], &lq.q[lq.horizon()]);
        if g.converged {
            for (t, p) in g.value.iter().enumerate() {
                prop_assert!((p - p.transpose()).abs().max() <= 1e-9 * p.abs().max().max(1.0));
                prop_assert!(min_eigenvalue(p) >= -1e-9 * p.abs().max().max(1.0), "P^{} not PSD", t);
            }
            for t in 0..lq.horizon() {
                let s = &lq.r_w[t] - lq.d[t].transpose() * &g.value[t + 1] * &lq.d[t];
                prop_assert!(min_eigenvalue(&s) > 0.0);
            }
        }
    }
}

fn tiny_game(a: f64, b: f64) -> GameDefinition {
    GameDefinition::new(
        2,
        1,
        Bounds::symmetric(1, 1.0),
        Bounds::symmetric(1, 1.0),
        std::sync::Arc::new(move |x, u, w| dvector![a * x[0] + u[0] + b * w[0]]),
        std::sync::Arc::new(|x, u, w| x[0] * x[0] + 0.5 * u[0] * u[0] - 0.3 * w[0] * w[0] + (x[0] * u[0]).sin()),
        std::sync::Arc::new(|x| 2.0 * x[0] * x[0]),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn brute_force_value_is_a_witnessed_upper_value(a in 0.5..1.5f64, b in -1.0..1.0f64, x in -2.0..2.0f64) {
        let grid: Vec<_> = [-1.0, -0.5, 0.0, 0.5, 1.0].iter().map(|&v| dvector![v]).collect();
        let dg = DiscretizedGame::new(tiny_game(a, b), grid.clone(), grid).unwrap();
        let x0 = dvector![x];
        let ne = brute_force_ne(&dg, &x0).unwrap();
        let (_, best) = best_human_response(&dg, &x0, &ne.u_seq).unwrap();
        prop_assert_eq!(best, ne.value);
        prop_assert_eq!(dg.base.cost_of(&x0, &ne.u_seq, &ne.w_seq).unwrap(), ne.value);
        for i in 0..25 {
            let u = ActionTrajectory::new(vec![dvector![[-1.0, -0.5, 0.0, 0.5, 1.0][i / 5]], dvector![[-1.0, -0.5, 0.0, 0.5, 1.0][i % 5]]]);
            prop_assert!(best_human_response(&dg, &x0, &u).unwrap().1 >= ne.value);
        }
        prop_assert!(brute_force_maxmin(&dg, &x0).unwrap().value <= ne.value);
    }

    #[test]
    fn summaries_bracket_the_data(values in prop::collection::vec(-1e3..1e3f64, 1..40)) {
        let s = MetricSummary::of(&values).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);
        prop_assert!(s.std >= 0.0);
        prop_assert_eq!(s.count, values.len());
    }

    #[test]
    fn welch_p_is_a_symmetric_probability(
        a in prop::collection::vec(-10.0..10.0f64, 2..30),
        b in prop::collection::vec(-10.0..10.0f64, 2..30),
    ) {
        let p = welch_p(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - welch_p(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(x in prop::collection::vec(-10.0..10.0f64, 3..30)) {
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        let (rho, _) = spearman(&x, &x).unwrap();
        let (rho_t, _) = spearman(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&rho));
        prop_assert!((rho - rho_t).abs() < 1e-12);
    }
}
