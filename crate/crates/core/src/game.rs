//! Zero-sum game instances: deterministic discrete-time dynamics, a robot
//! cost that the human maximizes, and trajectory evaluation.
//!
//! Dynamics and costs are opaque callables. Nothing downstream of the LQ
//! seed assumes they are differentiable.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type State = DVector<f64>;

pub type DynamicsFn = dyn Fn(&State, &Vector, &Vector) -> State + Send + Sync;
pub type StageCostFn = dyn Fn(&State, &Vector, &Vector) -> f64 + Send + Sync;
pub type TerminalCostFn = dyn Fn(&State) -> f64 + Send + Sync;

/// Per-dimension closed interval constraint on one agent's actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                what: "bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::config("lower bound exceeds upper bound"));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            lower: vec![-limit; dim],
            upper: vec![limit; dim],
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, a: &Vector) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn contains_all(&self, traj: &ActionTrajectory) -> bool {
        traj.iter().all(|a| self.contains(a))
    }

    pub fn clamp(&self, a: &Vector) -> Vector {
        Vector::from_iterator(
            a.len(),
            a.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(v, (l, u))| v.clamp(*l, *u)),
        )
    }

    pub fn clamp_trajectory(&self, traj: &ActionTrajectory) -> ActionTrajectory {
        ActionTrajectory::new(traj.iter().map(|a| self.clamp(a)).collect())
    }
}

/// One agent's open-loop action sequence, one action per timestep.
/// Serializes as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ActionTrajectory {
    actions: Vec<Vector>,
}

impl From<Vec<Vec<f64>>> for ActionTrajectory {
    fn from(rows: Vec<Vec<f64>>) -> Self {
        Self::from_rows(&rows)
    }
}

impl From<ActionTrajectory> for Vec<Vec<f64>> {
    fn from(traj: ActionTrajectory) -> Self {
        traj.to_rows()
    }
}

impl ActionTrajectory {
    pub fn new(actions: Vec<Vector>) -> Self {
        Self { actions }
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self {
            actions: vec![Vector::zeros(dim); horizon],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self {
            actions: rows.iter().map(|r| Vector::from_column_slice(r)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Action dimension, taken from the first action (0 for an empty trajectory).
    pub fn dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vector> {
        self.actions.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Vector> {
        self.actions.iter_mut()
    }

    pub fn as_slice(&self) -> &[Vector] {
        &self.actions
    }

    pub fn into_inner(self) -> Vec<Vector> {
        self.actions
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.actions.iter().map(|a| a.iter().copied().collect()).collect()
    }

    pub fn add(&self, other: &ActionTrajectory) -> ActionTrajectory {
        debug_assert_eq!(self.len(), other.len());
        ActionTrajectory::new(
            self.actions
                .iter()
                .zip(&other.actions)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ActionTrajectory) -> ActionTrajectory {
        debug_assert_eq!(self.len(), other.len());
        ActionTrajectory::new(
            self.actions
                .iter()
                .zip(&other.actions)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Squared Frobenius distance over the stacked action sequence.
    pub fn squared_distance(&self, other: &ActionTrajectory) -> f64 {
        self.actions
            .iter()
            .zip(&other.actions)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }

    pub fn max_abs_difference(&self, other: &ActionTrajectory) -> f64 {
        self.actions
            .iter()
            .zip(&other.actions)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Drops the first `n` actions and pads the tail with `fill`.
    pub fn shifted(&self, n: usize, fill: &Vector) -> ActionTrajectory {
        let mut actions: Vec<Vector> = self.actions.iter().skip(n).cloned().collect();
        actions.resize(self.len(), fill.clone());
        ActionTrajectory::new(actions)
    }
}

impl std::ops::Index<usize> for ActionTrajectory {
    type Output = Vector;
    fn index(&self, t: usize) -> &Vector {
        &self.actions[t]
    }
}

impl std::ops::IndexMut<usize> for ActionTrajectory {
    fn index_mut(&mut self, t: usize) -> &mut Vector {
        &mut self.actions[t]
    }
}

/// Initial state plus both agents' action sequences.
///
/// Serializes as `{"x0": [...], "u": [[...], ...], "w": [[...], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointTrajectoryRepr", into = "JointTrajectoryRepr")]
pub struct JointTrajectory {
    pub x0: State,
    pub robot: ActionTrajectory,
    pub human: ActionTrajectory,
}

impl JointTrajectory {
    pub fn new(x0: State, robot: ActionTrajectory, human: ActionTrajectory) -> Result<Self> {
        if robot.len() != human.len() {
            return Err(Error::Dimension {
                what: "human trajectory length",
                expected: robot.len(),
                got: human.len(),
            });
        }
        Ok(Self { x0, robot, human })
    }

    pub fn horizon(&self) -> usize {
        self.robot.len()
    }
}

#[derive(Serialize, Deserialize)]
struct JointTrajectoryRepr {
    x0: Vec<f64>,
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl TryFrom<JointTrajectoryRepr> for JointTrajectory {
    type Error = Error;
    fn try_from(r: JointTrajectoryRepr) -> Result<Self> {
        for rows in [&r.u, &r.w] {
            if let Some(first) = rows.first() {
                if let Some(bad) = rows.iter().find(|a| a.len() != first.len()) {
                    return Err(Error::Dimension {
                        what: "action",
                        expected: first.len(),
                        got: bad.len(),
                    });
                }
            }
        }
        JointTrajectory::new(
            State::from_vec(r.x0),
            ActionTrajectory::from_rows(&r.u),
            ActionTrajectory::from_rows(&r.w),
        )
    }
}

impl From<JointTrajectory> for JointTrajectoryRepr {
    fn from(j: JointTrajectory) -> Self {
        Self {
            x0: j.x0.iter().copied().collect(),
            u: j.robot.to_rows(),
            w: j.human.to_rows(),
        }
    }
}

/// A finite-horizon two-player zero-sum game. The robot minimizes the
/// cumulative cost, the worst-case human maximizes it.
#[derive(Clone)]
pub struct GameDefinition {
    horizon: usize,
    state_dim: usize,
    robot_bounds: Bounds,
    human_bounds: Bounds,
    dynamics: Arc<DynamicsFn>,
    stage_cost: Arc<StageCostFn>,
    terminal_cost: Arc<TerminalCostFn>,
}

impl fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameDefinition")
            .field("horizon", &self.horizon)
            .field("state_dim", &self.state_dim)
            .field("robot_bounds", &self.robot_bounds)
            .field("human_bounds", &self.human_bounds)
            .finish_non_exhaustive()
    }
}

impl GameDefinition {
    pub fn new(
        horizon: usize,
        state_dim: usize,
        robot_bounds: Bounds,
        human_bounds: Bounds,
        dynamics: Arc<DynamicsFn>,
        stage_cost: Arc<StageCostFn>,
        terminal_cost: Arc<TerminalCostFn>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        Ok(Self {
            horizon,
            state_dim,
            robot_bounds,
            human_bounds,
            dynamics,
            stage_cost,
            terminal_cost,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn robot_dim(&self) -> usize {
        self.robot_bounds.dim()
    }

    pub fn human_dim(&self) -> usize {
        self.human_bounds.dim()
    }

    pub fn robot_bounds(&self) -> &Bounds {
        &self.robot_bounds
    }

    pub fn human_bounds(&self) -> &Bounds {
        &self.human_bounds
    }

    pub fn dynamics(&self) -> &Arc<DynamicsFn> {
        &self.dynamics
    }

    /// Same game with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        Ok(Self {
            horizon,
            ..self.clone()
        })
    }

    pub fn stage_cost(&self, x: &State, u: &Vector, w: &Vector) -> f64 {
        (self.stage_cost)(x, u, w)
    }

    pub fn terminal_cost(&self, x: &State) -> f64 {
        (self.terminal_cost)(x)
    }

    fn check_dims(&self, x: &State, u: &Vector, w: &Vector) -> Result<()> {
        let checks = [
            ("state", self.state_dim, x.len()),
            ("robot action", self.robot_dim(), u.len()),
            ("human action", self.human_dim(), w.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn check_trajectory(&self, traj: &JointTrajectory) -> Result<()> {
        if traj.robot.len() != self.horizon {
            return Err(Error::Dimension {
                what: "robot trajectory length",
                expected: self.horizon,
                got: traj.robot.len(),
            });
        }
        if traj.human.len() != self.horizon {
            return Err(Error::Dimension {
                what: "human trajectory length",
                expected: self.horizon,
                got: traj.human.len(),
            });
        }
        Ok(())
    }

    /// One transition of the dynamics.
    pub fn step(&self, x: &State, u: &Vector, w: &Vector) -> Result<State> {
        self.check_dims(x, u, w)?;
        let next = (self.dynamics)(x, u, w);
        if next.len() != self.state_dim {
            return Err(Error::Dimension {
                what: "successor state",
                expected: self.state_dim,
                got: next.len(),
            });
        }
        if let Some(entry) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "successor state",
                timestep: 0,
                entry,
            });
        }
        Ok(next)
    }

    /// States `x^0 ..= x^T` visited by `traj`.
    pub fn rollout(&self, traj: &JointTrajectory) -> Result<Vec<State>> {
        self.check_trajectory(traj)?;
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(traj.x0.clone());
        for (t, (u, w)) in traj.robot.iter().zip(traj.human.iter()).enumerate() {
            let next = self
                .step(&states[t], u, w)
                .map_err(|e| at_timestep(e, t))?;
            states.push(next);
        }
        Ok(states)
    }

    /// `Σ_{t<T} j(x^t, u^t, w^t) + D(x^T)` along the rollout of `traj`.
    pub fn cumulative_cost(&self, traj: &JointTrajectory) -> Result<f64> {
        self.check_trajectory(traj)?;
        self.cost_of(&traj.x0, &traj.robot, &traj.human)
    }

    /// Cumulative cost without assembling a [`JointTrajectory`]; the hot path
    /// of the sampler.
    pub fn cost_of(
        &self,
        x0: &State,
        robot: &ActionTrajectory,
        human: &ActionTrajectory,
    ) -> Result<f64> {
        if robot.len() != self.horizon || human.len() != self.horizon {
            return Err(Error::Dimension {
                what: "trajectory length",
                expected: self.horizon,
                got: robot.len().min(human.len()),
            });
        }
        let mut x = x0.clone();
        let mut total = 0.0;
        for t in 0..self.horizon {
            let (u, w) = (&robot[t], &human[t]);
            let c = self.stage_cost(&x, u, w);
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: "stage cost",
                    timestep: t,
                    entry: 0,
                });
            }
            total += c;
            x = self.step(&x, u, w).map_err(|e| at_timestep(e, t))?;
        }
        let d = self.terminal_cost(&x);
        if !d.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal cost",
                timestep: self.horizon,
                entry: 0,
            });
        }
        Ok(total + d)
    }
}

fn at_timestep(e: Error, t: usize) -> Error {
    match e {
        Error::NonFinite { what, entry, .. } => Error::NonFinite {
            what,
            timestep: t,
            entry,
        },
        other => Error::Rollout {
            timestep: t,
            source: Box::new(other),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    /// Shared-position point mass: x' = x + u + w, cost ‖x − g‖².
    fn additive_game(horizon: usize, goal: [f64; 2]) -> GameDefinition {
        let g = dvector![goal[0], goal[1]];
        let g2 = g.clone();
        GameDefinition::new(
            horizon,
            2,
            Bounds::symmetric(2, 10.0),
            Bounds::symmetric(2, 10.0),
            Arc::new(|x, u, w| x + u + w),
            Arc::new(move |x, _, _| (x - &g).norm_squared()),
            Arc::new(move |x| (x - &g2).norm_squared()),
        )
        .unwrap()
    }

    fn traj(x0: State, u: &[[f64; 2]], w: &[[f64; 2]]) -> JointTrajectory {
        let rows = |a: &[[f64; 2]]| a.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        JointTrajectory::new(
            x0,
            ActionTrajectory::from_rows(&rows(u)),
            ActionTrajectory::from_rows(&rows(w)),
        )
        .unwrap()
    }

    #[test]
    fn step_adds_both_agents() {
        let game = additive_game(1, [0.0, 0.0]);
        let next = game
            .step(&dvector![0.0, 0.0], &dvector![1.0, 0.0], &dvector![0.0, 1.0])
            .unwrap();
        assert_eq!(next, dvector![1.0, 1.0]);
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        let game = additive_game(1, [0.0, 0.0]);
        let x = dvector![2.5, -1.0];
        let zero = Vector::zeros(2);
        assert_eq!(game.step(&x, &zero, &zero).unwrap(), x);
    }

    #[test]
    fn step_rejects_wrong_dimension() {
        let game = additive_game(1, [0.0, 0.0]);
        let err = game
            .step(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0], &dvector![0.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { what: "state", .. }));
    }

    #[test]
    fn non_finite_successor_names_the_entry() {
        let game = GameDefinition::new(
            2,
            2,
            Bounds::unbounded(1),
            Bounds::unbounded(1),
            Arc::new(|x, u, _| dvector![x[0] + u[0], x[1] / u[0]]),
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_| 0.0),
        )
        .unwrap();
        let t = JointTrajectory::new(
            dvector![1.0, 1.0],
            ActionTrajectory::from_rows(&[vec![1.0], vec![0.0]]),
            ActionTrajectory::zeros(2, 1),
        )
        .unwrap();
        // 1/0 = inf on the second step, entry 1
        let err = game.rollout(&t).unwrap_err();
        match err {
            Error::NonFinite {
                timestep, entry, ..
            } => {
                assert_eq!(timestep, 1);
                assert_eq!(entry, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rollout_of_zero_input_stays_put() {
        let game = additive_game(2, [0.0, 0.0]);
        let t = traj(dvector![3.0, 4.0], &[[0.0; 2]; 2], &[[0.0; 2]; 2]);
        let states = game.rollout(&t).unwrap();
        assert_eq!(states, vec![dvector![3.0, 4.0]; 3]);
    }

    #[test]
    fn rollout_accumulates_actions() {
        let game = additive_game(2, [0.0, 0.0]);
        let t = traj(dvector![0.0, 0.0], &[[1.0, 0.0]; 2], &[[0.0; 2]; 2]);
        let states = game.rollout(&t).unwrap();
        assert_eq!(
            states,
            vec![dvector![0.0, 0.0], dvector![1.0, 0.0], dvector![2.0, 0.0]]
        );
    }

    #[test]
    fn cost_at_goal_is_zero() {
        let game = additive_game(3, [1.0, 2.0]);
        let t = traj(dvector![1.0, 2.0], &[[0.0; 2]; 3], &[[0.0; 2]; 3]);
        assert_eq!(game.cumulative_cost(&t).unwrap(), 0.0);
    }

    #[test]
    fn one_step_cost_by_hand() {
        // j(x0) = ‖(0,0) − (1,0)‖² = 1, D(x1) = ‖(1,0) − (1,0)‖² = 0
        let game = additive_game(1, [1.0, 0.0]);
        let t = traj(dvector![0.0, 0.0], &[[1.0, 0.0]], &[[0.0, 0.0]]);
        assert_eq!(game.cumulative_cost(&t).unwrap(), 1.0);
    }

    #[test]
    fn cost_survives_json_round_trip() {
        let game = additive_game(3, [1.0, -1.0]);
        let t = traj(
            dvector![0.3, 0.1],
            &[[0.5, 0.1], [0.2, -0.3], [0.0, 0.7]],
            &[[0.1, 0.1], [-0.2, 0.0], [0.3, 0.3]],
        );
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("{\"x0\":"));
        let back: JointTrajectory = serde_json::from_str(&json).unwrap();
        assert_eq!(
            game.cumulative_cost(&t).unwrap().to_bits(),
            game.cumulative_cost(&back).unwrap().to_bits()
        );
    }

    #[test]
    fn ragged_json_is_rejected() {
        let bad = r#"{"x0":[0,0],"u":[[1,0],[1]],"w":[[0,0],[0,0]]}"#;
        assert!(serde_json::from_str::<JointTrajectory>(bad).is_err());
        let short = r#"{"x0":[0,0],"u":[[1,0]],"w":[[0,0],[0,0]]}"#;
        assert!(serde_json::from_str::<JointTrajectory>(short).is_err());
    }

    #[test]
    fn wrong_horizon_is_rejected() {
        let game = additive_game(3, [0.0, 0.0]);
        let t = traj(dvector![0.0, 0.0], &[[0.0; 2]; 2], &[[0.0; 2]; 2]);
        assert!(game.cumulative_cost(&t).is_err());
        assert!(game.rollout(&t).is_err());
    }

    #[test]
    fn bounds_clamp_and_contain() {
        let b = Bounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(b.contains(&dvector![0.5, 2.0]));
        assert!(!b.contains(&dvector![0.5, 2.1]));
        assert_eq!(b.clamp(&dvector![-3.0, 5.0]), dvector![-1.0, 2.0]);
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
    }
}
