#![allow(dead_code)]

use mclq_core::LqApproximation;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-stage gains from direct saddle solves of the stage quadratic: at each
/// `t`, `(K, L)` solve the joint first-order conditions
/// `[R_u + B'PB, B'PD; D'PB, D'PD − R_w] [K; L] = [B'PA; D'PA]`.
/// Returns `None` when the stage is not convex-concave.
pub fn stagewise_saddle(lq: &LqApproximation) -> Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let horizon = lq.horizon();
    let (mu, mw) = (lq.robot_dim(), lq.human_dim());
    let mut p = lq.q[horizon].clone();
    let mut ks = vec![DMatrix::zeros(0, 0); horizon];
    let mut ls = vec![DMatrix::zeros(0, 0); horizon];
    for t in (0..horizon).rev() {
        let (a, b, d) = (&lq.a[t], &lq.b[t], &lq.d[t]);
        let concave = &lq.r_w[t] - d.transpose() * &p * d;
        if concave.clone().cholesky().is_none() {
            return None;
        }
        let mut h = DMatrix::zeros(mu + mw, mu + mw);
        h.view_mut((0, 0), (mu, mu)).copy_from(&(&lq.r_u[t] + b.transpose() * &p * b));
        h.view_mut((0, mu), (mu, mw)).copy_from(&(b.transpose() * &p * d));
        h.view_mut((mu, 0), (mw, mu)).copy_from(&(d.transpose() * &p * b));
        h.view_mut((mu, mu), (mw, mw)).copy_from(&(d.transpose() * &p * d - &lq.r_w[t]));
        let mut rhs = DMatrix::zeros(mu + mw, a.ncols());
        rhs.view_mut((0, 0), (mu, a.ncols())).copy_from(&(b.transpose() * &p * a));
        rhs.view_mut((mu, 0), (mw, a.ncols())).copy_from(&(d.transpose() * &p * a));
        let sol = h.lu().solve(&rhs)?;
        let k = sol.rows(0, mu).into_owned();
        let l = sol.rows(mu, mw).into_owned();
        let f = a - b * &k - d * &l;
        let next = &lq.q[t] + k.transpose() * &lq.r_u[t] * &k - l.transpose() * &lq.r_w[t] * &l
            + f.transpose() * &p * &f;
        p = (&next + next.transpose()) * 0.5;
        ks[t] = k;
        ls[t] = l;
    }
    Some((ks, ls))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * shift
}

/// Random time-varying LQ game with state dimension ≤ `max_dim` and
/// horizon ≤ `max_horizon` that admits a stage-wise saddle.
pub fn random_lq_game(rng: &mut ChaCha8Rng, max_dim: usize, max_horizon: usize) -> LqApproximation {
    loop {
        let n = rng.random_range(1..=max_dim);
        let mu = rng.random_range(1..=n);
        let mw = rng.random_range(1..=n);
        let horizon = rng.random_range(1..=max_horizon);
        let a = (0..horizon)
            .map(|_| DMatrix::identity(n, n) + random_matrix(rng, n, n, 0.3))
            .collect();
        let b = (0..horizon).map(|_| random_matrix(rng, n, mu, 1.0)).collect();
        let d = (0..horizon).map(|_| random_matrix(rng, n, mw, 0.5)).collect();
        let q = (0..=horizon).map(|_| random_spd(rng, n, 0.1)).collect();
        let r_u = (0..horizon).map(|_| random_spd(rng, mu, 0.5)).collect();
        let r_w = (0..horizon).map(|_| random_spd(rng, mw, 5.0)).collect();
        let lq = LqApproximation::from_matrices(a, b, d, q, r_u, r_w).expect("consistent shapes");
        if stagewise_saddle(&lq).is_some() {
            return lq;
        }
    }
}
