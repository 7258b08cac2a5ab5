//! Linear-quadratic seeding of the game.
//!
//! The game is expanded about a nominal trajectory. In deviation coordinates
//! `δx = x − x̄`, `δu = u − ū`, `δw = w − w̄` each stage becomes
//!
//! ```text
//! δx' = A δx + B δu + D δw
//! c   = δx'Q δx + 2 q'δx + δu'R_u δu + 2 r_u'δu − δw'R_w δw + 2 r_w'δw
//! ```
//!
//! with the human's effort entering the zero-sum objective negatively. The
//! linear terms carry the first-order part of the cost about the nominal so
//! the resulting policies include a feedforward term.

pub mod augmented;
mod riccati;

pub use riccati::{solve_coupled_riccati, GainSchedule};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ActionTrajectory, GameDefinition, JointTrajectory, State, Vector};
use crate::linalg::{floor_eigenvalues, serde_rows};

/// Smallest eigenvalue allowed in the action-cost blocks.
pub const ACTION_COST_FLOOR: f64 = 1e-6;
pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Per-timestep LQ expansion of a game about `nominal`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LqApproximation {
    #[serde(with = "serde_rows::matrices")]
    pub a: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::matrices")]
    pub b: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::matrices")]
    pub d: Vec<DMatrix<f64>>,
    /// `T + 1` entries; the last comes from the terminal cost.
    #[serde(with = "serde_rows::matrices")]
    pub q: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub q_lin: Vec<DVector<f64>>,
    #[serde(with = "serde_rows::matrices")]
    pub r_u: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub r_u_lin: Vec<DVector<f64>>,
    #[serde(with = "serde_rows::matrices")]
    pub r_w: Vec<DMatrix<f64>>,
    #[serde(with = "serde_rows::vectors")]
    pub r_w_lin: Vec<DVector<f64>>,
    pub nominal: JointTrajectory,
    #[serde(with = "serde_rows::vectors")]
    pub nominal_states: Vec<State>,
}

impl LqApproximation {
    /// A homogeneous LQ game expanded about the origin (no linear terms).
    /// `q` must hold `T + 1` matrices, the others `T`.
    pub fn from_matrices(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        d: Vec<DMatrix<f64>>,
        q: Vec<DMatrix<f64>>,
        r_u: Vec<DMatrix<f64>>,
        r_w: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::config("LQ horizon must be positive"));
        }
        for (what, len, expected) in [
            ("B schedule", b.len(), horizon),
            ("D schedule", d.len(), horizon),
            ("Q schedule", q.len(), horizon + 1),
            ("R_u schedule", r_u.len(), horizon),
            ("R_w schedule", r_w.len(), horizon),
        ] {
            if len != expected {
                return Err(Error::Dimension {
                    what,
                    expected,
                    got: len,
                });
            }
        }
        let n = a[0].nrows();
        let m_u = b[0].ncols();
        let m_w = d[0].ncols();
        let nominal = JointTrajectory::new(
            State::zeros(n),
            ActionTrajectory::zeros(horizon, m_u),
            ActionTrajectory::zeros(horizon, m_w),
        )?;
        let lq = Self {
            q_lin: vec![DVector::zeros(n); horizon + 1],
            r_u_lin: vec![DVector::zeros(m_u); horizon],
            r_w_lin: vec![DVector::zeros(m_w); horizon],
            nominal_states: vec![State::zeros(n); horizon + 1],
            nominal,
            a,
            b,
            d,
            q,
            r_u,
            r_w,
        };
        lq.check_shapes()?;
        Ok(lq)
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn robot_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn human_dim(&self) -> usize {
        self.d[0].ncols()
    }

    fn check_shapes(&self) -> Result<()> {
        let (n, mu, mw) = (self.state_dim(), self.robot_dim(), self.human_dim());
        let shape_err = |what| Error::config(format!("{what} has inconsistent shape"));
        for t in 0..self.horizon() {
            if self.a[t].shape() != (n, n) {
                return Err(shape_err("A"));
            }
            if self.b[t].shape() != (n, mu) {
                return Err(shape_err("B"));
            }
            if self.d[t].shape() != (n, mw) {
                return Err(shape_err("D"));
            }
            if self.r_u[t].shape() != (mu, mu) {
                return Err(shape_err("R_u"));
            }
            if self.r_w[t].shape() != (mw, mw) {
                return Err(shape_err("R_w"));
            }
        }
        if self.q.iter().any(|q| q.shape() != (n, n)) {
            return Err(shape_err("Q"));
        }
        Ok(())
    }
}

fn fd_width(v: f64, fd_step: f64) -> f64 {
    fd_step * (1.0 + v.abs())
}

/// Central-difference Jacobian of `f` with respect to `v`.
fn jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, v: &DVector<f64>, rows: usize, fd_step: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, v.len());
    let mut probe = v.clone();
    for i in 0..v.len() {
        let h = fd_width(v[i], fd_step);
        probe[i] = v[i] + h;
        let plus = f(&probe);
        probe[i] = v[i] - h;
        let minus = f(&probe);
        probe[i] = v[i];
        jac.set_column(i, &((plus - minus) / (2.0 * h)));
    }
    jac
}

/// Central-difference gradient and Hessian of a scalar function.
fn gradient_hessian(f: impl Fn(&DVector<f64>) -> f64, v: &DVector<f64>, fd_step: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = v.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let center = f(v);
    let widths: Vec<f64> = v.iter().map(|&x| fd_width(x, fd_step)).collect();
    let mut probe = v.clone();
    for i in 0..n {
        let hi = widths[i];
        probe[i] = v[i] + hi;
        let plus = f(&probe);
        probe[i] = v[i] - hi;
        let minus = f(&probe);
        probe[i] = v[i];
        grad[i] = (plus - minus) / (2.0 * hi);
        hess[(i, i)] = (plus - 2.0 * center + minus) / (hi * hi);
        for j in 0..i {
            let hj = widths[j];
            let mut corner = |si: f64, sj: f64| {
                probe[i] = v[i] + si * hi;
                probe[j] = v[j] + sj * hj;
                let val = f(&probe);
                probe[i] = v[i];
                probe[j] = v[j];
                val
            };
            let mixed = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    (grad, hess)
}

fn check_finite_matrix(m: &DMatrix<f64>, what: &'static str, timestep: usize) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        Some(entry) => Err(Error::NonFinite {
            what,
            timestep,
            entry,
        }),
        None => Ok(()),
    }
}

fn check_finite_vector(v: &DVector<f64>, what: &'static str, timestep: usize) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(entry) => Err(Error::NonFinite {
            what,
            timestep,
            entry,
        }),
        None => Ok(()),
    }
}

/// Linearizes the dynamics and quadraticizes the stage and terminal costs
/// along the rollout of `nominal`. Cross terms between state and actions are
/// dropped; `Q` is projected onto the PSD cone and the action blocks are
/// floored at [`ACTION_COST_FLOOR`].
pub fn linearize_quadraticize(
    game: &GameDefinition,
    nominal: &JointTrajectory,
    fd_step: f64,
) -> Result<LqApproximation> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let states = game.rollout(nominal)?;
    let horizon = game.horizon();
    let (n, mu, mw) = (game.state_dim(), game.robot_dim(), game.human_dim());
    let f = game.dynamics();

    let mut lq = LqApproximation {
        a: Vec::with_capacity(horizon),
        b: Vec::with_capacity(horizon),
        d: Vec::with_capacity(horizon),
        q: Vec::with_capacity(horizon + 1),
        q_lin: Vec::with_capacity(horizon + 1),
        r_u: Vec::with_capacity(horizon),
        r_u_lin: Vec::with_capacity(horizon),
        r_w: Vec::with_capacity(horizon),
        r_w_lin: Vec::with_capacity(horizon),
        nominal: nominal.clone(),
        nominal_states: Vec::new(),
    };

    for t in 0..horizon {
        let (x, u, w) = (&states[t], &nominal.robot[t], &nominal.human[t]);

        let a = jacobian(|xp| f(xp, u, w), x, n, fd_step);
        let b = jacobian(|up| f(x, up, w), u, n, fd_step);
        let d = jacobian(|wp| f(x, u, wp), w, n, fd_step);
        for (m, what) in [(&a, "dynamics Jacobian A"), (&b, "dynamics Jacobian B"), (&d, "dynamics Jacobian D")] {
            check_finite_matrix(m, what, t)?;
        }

        let (gx, hx) = gradient_hessian(|xp| game.stage_cost(xp, u, w), x, fd_step);
        let (gu, hu) = gradient_hessian(|up| game.stage_cost(x, up, w), u, fd_step);
        let (gw, hw) = gradient_hessian(|wp| game.stage_cost(x, u, wp), w, fd_step);
        for (m, what) in [(&hx, "cost Hessian (state)"), (&hu, "cost Hessian (robot)"), (&hw, "cost Hessian (human)")] {
            check_finite_matrix(m, what, t)?;
        }
        for (v, what) in [(&gx, "cost gradient (state)"), (&gu, "cost gradient (robot)"), (&gw, "cost gradient (human)")] {
            check_finite_vector(v, what, t)?;
        }

        lq.a.push(a);
        lq.b.push(b);
        lq.d.push(d);
        lq.q.push(floor_eigenvalues(&(hx * 0.5), 0.0));
        lq.q_lin.push(gx * 0.5);
        lq.r_u.push(floor_eigenvalues(&(hu * 0.5), ACTION_COST_FLOOR));
        lq.r_u_lin.push(gu * 0.5);
        lq.r_w.push(floor_eigenvalues(&(hw * -0.5), ACTION_COST_FLOOR));
        lq.r_w_lin.push(gw * 0.5);
        debug_assert_eq!(lq.r_u[t].nrows(), mu);
        debug_assert_eq!(lq.r_w[t].nrows(), mw);
    }

    let (g_term, h_term) = gradient_hessian(|xp| game.terminal_cost(xp), &states[horizon], fd_step);
    check_finite_matrix(&h_term, "terminal cost Hessian", horizon)?;
    check_finite_vector(&g_term, "terminal cost gradient", horizon)?;
    lq.q.push(floor_eigenvalues(&(h_term * 0.5), 0.0));
    lq.q_lin.push(g_term * 0.5);
    lq.nominal_states = states;
    Ok(lq)
}

/// Forward-simulates the true dynamics from `x0` under the affine feedback
/// policies `u = ū − K δx − k`, `w = w̄ − L δx − l`, with actions clamped to
/// the game's bounds.
pub fn gains_to_trajectory(
    gains: &GainSchedule,
    game: &GameDefinition,
    x0: &State,
    lq: &LqApproximation,
) -> Result<JointTrajectory> {
    let horizon = lq.horizon();
    if gains.horizon() != horizon || game.horizon() != horizon {
        return Err(Error::Dimension {
            what: "gain schedule horizon",
            expected: horizon,
            got: gains.horizon(),
        });
    }
    let mut x = x0.clone();
    let mut robot = Vec::with_capacity(horizon);
    let mut human = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let dx = &x - &lq.nominal_states[t];
        let u: Vector = &lq.nominal.robot[t] - &gains.robot_gains[t] * &dx - &gains.robot_feedforward[t];
        let w: Vector = &lq.nominal.human[t] - &gains.human_gains[t] * &dx - &gains.human_feedforward[t];
        let u = game.robot_bounds().clamp(&u);
        let w = game.human_bounds().clamp(&w);
        x = game.step(&x, &u, &w)?;
        robot.push(u);
        human.push(w);
    }
    JointTrajectory::new(
        x0.clone(),
        ActionTrajectory::new(robot),
        ActionTrajectory::new(human),
    )
}

/// Expansion, coupled Riccati solve and forward pass in one call.
pub fn lq_seed(
    game: &GameDefinition,
    x0: &State,
    nominal: &JointTrajectory,
    opts: &LqOptions,
) -> Result<(JointTrajectory, GainSchedule)> {
    let lq = linearize_quadraticize(game, nominal, opts.fd_step)?;
    let gains = solve_coupled_riccati(&lq, opts.max_iters, opts.tol)?;
    let seed = gains_to_trajectory(&gains, game, x0, &lq)?;
    Ok((seed, gains))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqOptions {
    pub fd_step: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LqOptions {
    fn default() -> Self {
        Self {
            fd_step: DEFAULT_FD_STEP,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Bounds;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn quadratic_game() -> GameDefinition {
        // j = ‖x‖² + ‖u‖² − 2‖w‖²
        GameDefinition::new(
            3,
            2,
            Bounds::unbounded(2),
            Bounds::unbounded(2),
            Arc::new(|x, u, w| x + u + w),
            Arc::new(|x, u, w| x.norm_squared() + u.norm_squared() - 2.0 * w.norm_squared()),
            Arc::new(|x| x.norm_squared()),
        )
        .unwrap()
    }

    fn some_nominal() -> JointTrajectory {
        JointTrajectory::new(
            dvector![0.7, -0.4],
            ActionTrajectory::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.0], vec![0.5, 0.5]]),
            ActionTrajectory::from_rows(&[vec![0.0, 0.1], vec![0.2, -0.2], vec![0.0, 0.0]]),
        )
        .unwrap()
    }

    #[test]
    fn additive_dynamics_linearize_to_identity() {
        let lq = linearize_quadraticize(&quadratic_game(), &some_nominal(), DEFAULT_FD_STEP).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        for t in 0..3 {
            for m in [&lq.a[t], &lq.b[t], &lq.d[t]] {
                assert!((m - &eye).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn quadratic_costs_are_recovered() {
        let lq = linearize_quadraticize(&quadratic_game(), &some_nominal(), DEFAULT_FD_STEP).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        for t in 0..3 {
            assert!((&lq.q[t] - &eye).abs().max() < 1e-6);
            assert!((&lq.r_u[t] - &eye).abs().max() < 1e-6);
            assert!((&lq.r_w[t] - &eye * 2.0).abs().max() < 1e-6);
        }
        assert!((&lq.q[3] - &eye).abs().max() < 1e-6);
        // linear terms are half the gradient: q = x̄, r_u = ū, r_w = −2 w̄
        let states = quadratic_game().rollout(&some_nominal()).unwrap();
        assert!((&lq.q_lin[1] - &states[1]).abs().max() < 1e-6);
        assert!((&lq.r_u_lin[0] - &some_nominal().robot[0]).abs().max() < 1e-6);
        assert!((&lq.r_w_lin[1] + &some_nominal().human[1] * 2.0).abs().max() < 1e-6);
    }

    #[test]
    fn flat_action_cost_is_floored() {
        let game = GameDefinition::new(
            2,
            1,
            Bounds::unbounded(1),
            Bounds::unbounded(1),
            Arc::new(|x, u, w| x + u + w),
            Arc::new(|x, _, _| x[0] * x[0]),
            Arc::new(|_| 0.0),
        )
        .unwrap();
        let nominal = JointTrajectory::new(
            dvector![1.0],
            ActionTrajectory::zeros(2, 1),
            ActionTrajectory::zeros(2, 1),
        )
        .unwrap();
        let lq = linearize_quadraticize(&game, &nominal, DEFAULT_FD_STEP).unwrap();
        assert!((lq.r_u[0][(0, 0)] - ACTION_COST_FLOOR).abs() < 1e-12);
        assert!((lq.r_w[0][(0, 0)] - ACTION_COST_FLOOR).abs() < 1e-12);
    }

    #[test]
    fn non_finite_hessian_reports_timestep() {
        let game = GameDefinition::new(
            2,
            1,
            Bounds::unbounded(1),
            Bounds::unbounded(1),
            Arc::new(|x, u, w| x + u + w),
            Arc::new(|x, _, _| if x[0] > 0.5 { (x[0] - 1.0).ln() } else { 0.0 }),
            Arc::new(|_| 0.0),
        )
        .unwrap();
        let nominal = JointTrajectory::new(
            dvector![0.0],
            ActionTrajectory::from_rows(&[vec![1.0], vec![0.0]]),
            ActionTrajectory::zeros(2, 1),
        )
        .unwrap();
        let err = linearize_quadraticize(&game, &nominal, DEFAULT_FD_STEP).unwrap_err();
        assert!(matches!(err, Error::NonFinite { timestep: 1, .. }), "{err}");
    }

    #[test]
    fn zero_gains_reproduce_nominal_actions() {
        let game = quadratic_game();
        let nominal = some_nominal();
        let lq = linearize_quadraticize(&game, &nominal, DEFAULT_FD_STEP).unwrap();
        let gains = GainSchedule::zeros(3, 2, 2, 2);
        let traj = gains_to_trajectory(&gains, &game, &nominal.x0, &lq).unwrap();
        assert_eq!(traj, nominal);
    }

    #[test]
    fn lq_json_dump_parses() {
        let lq = linearize_quadraticize(&quadratic_game(), &some_nominal(), DEFAULT_FD_STEP).unwrap();
        let json = serde_json::to_string(&lq).unwrap();
        let back: LqApproximation = serde_json::from_str(&json).unwrap();
        assert_eq!(back.q.len(), 4);
        assert_eq!(back.a[0].shape(), (2, 2));
    }

    #[test]
    fn symmetric_part_is_symmetric() {
        let m = nalgebra::dmatrix![1.0, 2.0; 0.0, 1.0];
        let s = crate::linalg::symmetric_part(&m);
        assert_eq!(s, s.transpose());
    }
}
