use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LqApproximation;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_abs_vec, min_eigenvalue, serde_rows, symmetric_part};

/// Time-varying affine feedback policies for both agents plus the value
/// function `V^t(δx) = δx'P^t δx + 2 p^t'δx`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainSchedule {
    /// `K^t`, robot feedback gains.
    #[serde(with = "serde_rows::matrices")]
    pub robot_gains: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub robot_feedforward: Vec<DVector<f64>>,
    /// `L^t`, worst-case human feedback gains.
    #[serde(with = "serde_rows::matrices")]
    pub human_gains: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub human_feedforward: Vec<DVector<f64>>,
    /// `P^t` for `t = 0..=T`, with `P^T = Q^T`.
    #[serde(with = "serde_rows::matrices")]
    pub value: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub value_lin: Vec<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Timesteps where `R_w − D'P D` is not positive definite. The human gain
    /// at those steps is zero (single-player LQR fallback).
    pub eigen_violations: Vec<usize>,
}

impl GainSchedule {
    pub fn zeros(horizon: usize, state_dim: usize, robot_dim: usize, human_dim: usize) -> Self {
        Self {
            robot_gains: vec![DMatrix::zeros(robot_dim, state_dim); horizon],
            robot_feedforward: vec![DVector::zeros(robot_dim); horizon],
            human_gains: vec![DMatrix::zeros(human_dim, state_dim); horizon],
            human_feedforward: vec![DVector::zeros(human_dim); horizon],
            value: vec![DMatrix::zeros(state_dim, state_dim); horizon + 1],
            value_lin: vec![DVector::zeros(state_dim); horizon + 1],
            converged: false,
            iterations: 0,
            eigen_violations: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.robot_gains.len()
    }
}

struct Stage<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    d: &'a DMatrix<f64>,
    q: &'a DMatrix<f64>,
    q_lin: &'a DVector<f64>,
    r_u: &'a DMatrix<f64>,
    r_u_lin: &'a DVector<f64>,
    r_w: &'a DMatrix<f64>,
    r_w_lin: &'a DVector<f64>,
}

fn stage(lq: &LqApproximation, t: usize) -> Stage<'_> {
    Stage {
        a: &lq.a[t],
        b: &lq.b[t],
        d: &lq.d[t],
        q: &lq.q[t],
        q_lin: &lq.q_lin[t],
        r_u: &lq.r_u[t],
        r_u_lin: &lq.r_u_lin[t],
        r_w: &lq.r_w[t],
        r_w_lin: &lq.r_w_lin[t],
    }
}

/// Value of the stage under fixed policies, given the next-step value.
#[allow(clippy::too_many_arguments)]
fn value_update(
    s: &Stage<'_>,
    k_gain: &DMatrix<f64>,
    k_ff: &DVector<f64>,
    l_gain: &DMatrix<f64>,
    l_ff: &DVector<f64>,
    p_next: &DMatrix<f64>,
    p_lin_next: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let closed = s.a - s.b * k_gain - s.d * l_gain;
    let drift = -(s.b * k_ff) - s.d * l_ff;
    let k_t = k_gain.transpose();
    let l_t = l_gain.transpose();
    let p = s.q + &k_t * s.r_u * k_gain - &l_t * s.r_w * l_gain + closed.transpose() * p_next * &closed;
    let p_lin = s.q_lin + &k_t * (s.r_u * k_ff - s.r_u_lin) - &l_t * (s.r_w * l_ff + s.r_w_lin)
        + closed.transpose() * (p_next * drift + p_lin_next);
    (symmetric_part(&p), p_lin)
}

/// Worst-case human response to a fixed robot schedule. Returns the timesteps
/// where the concavity condition failed.
fn human_pass(lq: &LqApproximation, g: &mut GainSchedule) -> Vec<usize> {
    let horizon = lq.horizon();
    let mut violations = Vec::new();
    g.value[horizon] = lq.q[horizon].clone();
    g.value_lin[horizon] = lq.q_lin[horizon].clone();
    for t in (0..horizon).rev() {
        let s = stage(lq, t);
        let (p, p_lin) = (&g.value[t + 1], &g.value_lin[t + 1]);
        let response = stage_human_reply(&s, p, p_lin, &g.robot_gains[t], &g.robot_feedforward[t]);
        match response {
            Some((gain, ff)) => {
                g.human_gains[t] = gain;
                g.human_feedforward[t] = ff;
            }
            None => {
                violations.push(t);
                g.human_gains[t].fill(0.0);
                g.human_feedforward[t].fill(0.0);
            }
        }
        let (p, p_lin) = value_update(
            &s,
            &g.robot_gains[t],
            &g.robot_feedforward[t],
            &g.human_gains[t],
            &g.human_feedforward[t],
            &g.value[t + 1],
            &g.value_lin[t + 1],
        );
        g.value[t] = p;
        g.value_lin[t] = p_lin;
    }
    violations.reverse();
    violations
}

/// Worst-case human reply at one stage to a robot rule `(K, k)`, or `None`
/// when `R_w − D'PD` is not positive definite.
fn stage_human_reply(
    s: &Stage<'_>,
    p: &DMatrix<f64>,
    p_lin: &DVector<f64>,
    k_gain: &DMatrix<f64>,
    k_ff: &DVector<f64>,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let dt_p = s.d.transpose() * p;
    let concavity = (s.r_w - &dt_p * s.d).cholesky()?;
    let gain = -concavity.solve(&(&dt_p * (s.a - s.b * k_gain)));
    let ff = concavity.solve(&(&dt_p * s.b * k_ff - s.d.transpose() * p_lin - s.r_w_lin));
    Some((gain, ff))
}

/// Robust robot response: at each stage, `K(L)` against the human rule that
/// best responds to `K` itself. With `P̃ = P + PD(R_w − D'PD)⁻¹D'P` this is
/// `K = (R_u + B'P̃B)⁻¹B'P̃A`; where the concavity condition fails it is the
/// single-player LQR gain.
fn robot_pass(lq: &LqApproximation, g: &mut GainSchedule) -> Result<()> {
    let horizon = lq.horizon();
    g.value[horizon] = lq.q[horizon].clone();
    g.value_lin[horizon] = lq.q_lin[horizon].clone();
    for t in (0..horizon).rev() {
        let s = stage(lq, t);
        let (p, p_lin) = (&g.value[t + 1], &g.value_lin[t + 1]);
        let pd = p * s.d;
        let worst = (s.r_w - s.d.transpose() * &pd)
            .cholesky()
            .map(|c| (p + &pd * c.solve(&pd.transpose()), p_lin + &pd * c.solve(&(s.d.transpose() * p_lin + s.r_w_lin))));
        let (p_eff, p_lin_eff) = match &worst {
            Some((pt, plt)) => (pt, plt),
            None => (p, p_lin),
        };
        let bt_p = s.b.transpose() * p_eff;
        let chol = (s.r_u + &bt_p * s.b).cholesky().ok_or(Error::Singular {
            what: "R_u + B'PB",
            timestep: t,
        })?;
        g.robot_gains[t] = chol.solve(&(&bt_p * s.a));
        g.robot_feedforward[t] = chol.solve(&(s.b.transpose() * p_lin_eff + s.r_u_lin));
        let reply = worst
            .and_then(|_| stage_human_reply(&s, p, p_lin, &g.robot_gains[t], &g.robot_feedforward[t]))
            .unwrap_or_else(|| (DMatrix::zeros(lq.human_dim(), lq.state_dim()), DVector::zeros(lq.human_dim())));
        (g.human_gains[t], g.human_feedforward[t]) = reply;
        let (p, p_lin) = value_update(
            &s,
            &g.robot_gains[t],
            &g.robot_feedforward[t],
            &g.human_gains[t],
            &g.human_feedforward[t],
            &g.value[t + 1],
            &g.value_lin[t + 1],
        );
        g.value[t] = p;
        g.value_lin[t] = p_lin;
    }
    Ok(())
}

fn schedule_change(a: &[DMatrix<f64>], b: &[DMatrix<f64>], av: &[DVector<f64>], bv: &[DVector<f64>]) -> f64 {
    let mats = a.iter().zip(b).map(|(x, y)| max_abs(&(x - y)));
    let vecs = av.iter().zip(bv).map(|(x, y)| max_abs_vec(&(x - y)));
    mats.chain(vecs).fold(0.0, f64::max)
}

/// Solves the finite-horizon zero-sum LQ game by alternating two backward
/// Riccati recursions: the worst-case human gain `L(K)` for the current robot
/// schedule, then the robust robot gain `K(L)`, starting from `K = 0`, until
/// the largest gain change drops below `tol`.
pub fn solve_coupled_riccati(lq: &LqApproximation, max_iters: usize, tol: f64) -> Result<GainSchedule> {
    if max_iters == 0 {
        return Err(Error::config("max_iters must be at least 1"));
    }
    let horizon = lq.horizon();
    let mut gains = GainSchedule::zeros(horizon, lq.state_dim(), lq.robot_dim(), lq.human_dim());
    let mut settled = false;
    for iter in 1..=max_iters {
        gains.iterations = iter;
        let previous = gains.clone();
        human_pass(lq, &mut gains);
        robot_pass(lq, &mut gains)?;
        let change = schedule_change(&previous.robot_gains, &gains.robot_gains, &previous.robot_feedforward, &gains.robot_feedforward)
            .max(schedule_change(&previous.human_gains, &gains.human_gains, &previous.human_feedforward, &gains.human_feedforward));
        if change < tol {
            settled = true;
            break;
        }
    }

    gains.eigen_violations = (0..horizon)
        .filter(|&t| {
            let p = &gains.value[t + 1];
            min_eigenvalue(&(&lq.r_w[t] - lq.d[t].transpose() * p * &lq.d[t])) <= 0.0
        })
        .collect();
    for &t in &gains.eigen_violations {
        gains.human_gains[t].fill(0.0);
        gains.human_feedforward[t].fill(0.0);
    }
    gains.converged = settled && gains.eigen_violations.is_empty();
    Ok(gains)
}
