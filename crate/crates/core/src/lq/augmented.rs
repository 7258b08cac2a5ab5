//! Reference form of the coupled Riccati solve on the stacked ("augmented")
//! system, where the whole horizon is one state vector `[x⁰; …; x^T]` and the
//! dynamics are block-shift matrices. It is `O((T·d)³)` per iteration and
//! exists to cross-check the per-timestep recursion on small problems.
//!
//! Only the homogeneous part of the expansion is used (linear cost terms are
//! ignored).

use nalgebra::DMatrix;

use super::LqApproximation;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, solve, symmetric_part};

/// Block matrices of the stacked system.
#[derive(Clone, Debug)]
pub struct StackedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r_u: DMatrix<f64>,
    pub r_w: DMatrix<f64>,
    horizon: usize,
    state_dim: usize,
    robot_dim: usize,
    human_dim: usize,
}

impl StackedSystem {
    /// `A = [[0, 0], [diag(A⁰…A^{T−1}), 0]]`, likewise `B` and `D`;
    /// `Q = diag(Q⁰…Q^T)`; the action weights get an identity block for the
    /// unused slot `T`.
    pub fn build(lq: &LqApproximation) -> Self {
        let horizon = lq.horizon();
        let (n, mu, mw) = (lq.state_dim(), lq.robot_dim(), lq.human_dim());
        let slots = horizon + 1;
        let mut a = DMatrix::zeros(slots * n, slots * n);
        let mut b = DMatrix::zeros(slots * n, slots * mu);
        let mut d = DMatrix::zeros(slots * n, slots * mw);
        let mut q = DMatrix::zeros(slots * n, slots * n);
        let mut r_u = DMatrix::identity(slots * mu, slots * mu);
        let mut r_w = DMatrix::identity(slots * mw, slots * mw);
        for t in 0..horizon {
            a.view_mut(((t + 1) * n, t * n), (n, n)).copy_from(&lq.a[t]);
            b.view_mut(((t + 1) * n, t * mu), (n, mu)).copy_from(&lq.b[t]);
            d.view_mut(((t + 1) * n, t * mw), (n, mw)).copy_from(&lq.d[t]);
            r_u.view_mut((t * mu, t * mu), (mu, mu)).copy_from(&lq.r_u[t]);
            r_w.view_mut((t * mw, t * mw), (mw, mw)).copy_from(&lq.r_w[t]);
        }
        for t in 0..slots {
            q.view_mut((t * n, t * n), (n, n)).copy_from(&lq.q[t]);
        }
        Self {
            a,
            b,
            d,
            q,
            r_u,
            r_w,
            horizon,
            state_dim: n,
            robot_dim: mu,
            human_dim: mw,
        }
    }

    /// Fixed point of `P = Q + K'R_uK + (A−BK)'P̃(A−BK)` with
    /// `P̃ = P + PD(R_w − D'PD)⁻¹D'P`, then `L(K) = (−R_w + D'PD)⁻¹D'P(A−BK)`.
    fn human_response(&self, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let closed = &self.a - &self.b * k;
        let mut p = self.q.clone();
        // the stacked closed loop is nilpotent, so T + 1 sweeps are exact
        for _ in 0..=self.horizon + 1 {
            let pd = &p * &self.d;
            let s = &self.r_w - self.d.transpose() * &pd;
            let inner = solve(&s, &pd.transpose()).ok_or(Error::Singular {
                what: "stacked R_w − D'PD",
                timestep: 0,
            })?;
            let p_tilde = &p + &pd * inner;
            p = symmetric_part(&(&self.q + k.transpose() * &self.r_u * k + closed.transpose() * p_tilde * &closed));
        }
        let lhs = self.d.transpose() * &p * &self.d - &self.r_w;
        let l = solve(&lhs, &(self.d.transpose() * &p * &closed)).ok_or(Error::Singular {
            what: "stacked −R_w + D'PD",
            timestep: 0,
        })?;
        Ok((l, p))
    }

    /// Robust robot gain `K = (R_u + B'P̃B)⁻¹B'P̃A`, where `P̃` carries the
    /// human's best response to `K` itself. `P` is swept to its fixed point
    /// `P = Q + K'R_uK − L'R_wL + (A−BK−DL)'P(A−BK−DL)`.
    fn robot_response(&self) -> Result<DMatrix<f64>> {
        let mut p = self.q.clone();
        let mut k = DMatrix::zeros(self.b.ncols(), self.a.ncols());
        for _ in 0..=self.horizon + 1 {
            let pd = &p * &self.d;
            let s = &self.r_w - self.d.transpose() * &pd;
            let inner = solve(&s, &pd.transpose()).ok_or(Error::Singular {
                what: "stacked R_w − D'PD",
                timestep: 0,
            })?;
            let p_tilde = &p + &pd * inner;
            let g = &self.r_u + self.b.transpose() * &p_tilde * &self.b;
            k = solve(&g, &(self.b.transpose() * &p_tilde * &self.a)).ok_or(Error::Singular {
                what: "stacked R_u + B'P̃B",
                timestep: 0,
            })?;
            let after_robot = &self.a - &self.b * &k;
            let l = solve(&(-s), &(pd.transpose() * &after_robot)).ok_or(Error::Singular {
                what: "stacked −R_w + D'PD",
                timestep: 0,
            })?;
            let closed = after_robot - &self.d * &l;
            p = symmetric_part(
                &(&self.q + k.transpose() * &self.r_u * &k - l.transpose() * &self.r_w * &l + closed.transpose() * &p * &closed),
            );
        }
        Ok(k)
    }

    fn diagonal_blocks(&self, m: &DMatrix<f64>, rows: usize) -> Vec<DMatrix<f64>> {
        let n = self.state_dim;
        (0..self.horizon)
            .map(|t| m.view((t * rows, t * n), (rows, n)).into_owned())
            .collect()
    }
}

/// Per-timestep `(K^t, L^t)` from the stacked system: the robust robot gain,
/// then the human's best response to it, repeated until the gains settle.
pub fn solve_stacked(lq: &LqApproximation, max_iters: usize, tol: f64) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let sys = StackedSystem::build(lq);
    let slots = sys.horizon + 1;
    let mut k = DMatrix::zeros(slots * sys.robot_dim, slots * sys.state_dim);
    let mut l = DMatrix::zeros(slots * sys.human_dim, slots * sys.state_dim);
    for _ in 0..max_iters {
        let (l_next, _) = sys.human_response(&k)?;
        let k_next = sys.robot_response()?;
        let change = max_abs(&(&k_next - &k)).max(max_abs(&(&l_next - &l)));
        k = k_next;
        l = l_next;
        if change < tol {
            break;
        }
    }
    Ok((sys.diagonal_blocks(&k, sys.robot_dim), sys.diagonal_blocks(&l, sys.human_dim)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::solve_coupled_riccati;
    use nalgebra::dmatrix;

    #[test]
    fn stacked_dynamics_are_block_shifts() {
        let lq = LqApproximation::from_matrices(
            vec![dmatrix![2.0], dmatrix![3.0]],
            vec![dmatrix![1.0]; 2],
            vec![dmatrix![0.5]; 2],
            vec![dmatrix![1.0]; 3],
            vec![dmatrix![1.0]; 2],
            vec![dmatrix![4.0]; 2],
        )
        .unwrap();
        let sys = StackedSystem::build(&lq);
        assert_eq!(sys.a, dmatrix![0.0, 0.0, 0.0; 2.0, 0.0, 0.0; 0.0, 3.0, 0.0]);
        assert_eq!(sys.q, DMatrix::identity(3, 3));
    }

    #[test]
    fn scalar_game_matches_recursion() {
        let lq = LqApproximation::from_matrices(
            vec![dmatrix![1.05]; 3],
            vec![dmatrix![1.0]; 3],
            vec![dmatrix![0.4]; 3],
            vec![dmatrix![1.0]; 4],
            vec![dmatrix![0.5]; 3],
            vec![dmatrix![3.0]; 3],
        )
        .unwrap();
        let (k, l) = solve_stacked(&lq, 200, 1e-14).unwrap();
        let g = solve_coupled_riccati(&lq, 200, 1e-14).unwrap();
        for t in 0..3 {
            assert!((k[t][(0, 0)] - g.robot_gains[t][(0, 0)]).abs() < 1e-10);
            assert!((l[t][(0, 0)] - g.human_gains[t][(0, 0)]).abs() < 1e-10);
        }
    }
}
