mod common;

use mclq_core::lq::augmented::solve_stacked;
use mclq_core::solve_coupled_riccati;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_gap(a: &[nalgebra::DMatrix<f64>], b: &[nalgebra::DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs().max()).fold(0.0, f64::max)
}

#[test]
fn alternation_matches_stagewise_saddle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..30 {
        let lq = common::random_lq_game(&mut rng, 4, 10);
        let (k, l) = common::stagewise_saddle(&lq).unwrap();
        let g = solve_coupled_riccati(&lq, 500, 1e-12).unwrap();
        assert!(g.converged, "instance {i} did not converge");
        let gap = max_gap(&k, &g.robot_gains).max(max_gap(&l, &g.human_gains));
        assert!(gap < 1e-6, "instance {i}: gap {gap}");
    }
}

#[test]
fn stacked_form_matches_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..15 {
        let lq = common::random_lq_game(&mut rng, 3, 4);
        let g = solve_coupled_riccati(&lq, 500, 1e-13).unwrap();
        let (k, l) = solve_stacked(&lq, 500, 1e-13).unwrap();
        let gap = max_gap(&k, &g.robot_gains).max(max_gap(&l, &g.human_gains));
        assert!(gap < 1e-8, "instance {i}: gap {gap}");
    }
}
