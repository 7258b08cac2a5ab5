//! Two kinematic bicycles: the robot car and one human-driven car.
//!
//! Each agent's state is `(px, py, θ, v)` and its controls are
//! `(acceleration, steering angle)`; the joint state is `[robot; human]`.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Bounds, GameDefinition, State, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingParams {
    pub goal: [f64; 2],
    pub eta: f64,
    /// Diagonal of `R_u` for (acceleration, steering).
    pub r_u: [f64; 2],
    pub dt: f64,
    pub wheelbase: f64,
    pub accel_bound: f64,
    pub steer_bound: f64,
    pub human_accel_bound: f64,
    pub human_steer_bound: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
}

impl Default for DrivingParams {
    fn default() -> Self {
        Self {
            goal: [10.0, 0.0],
            eta: 10.0,
            r_u: [1.0, 1.0],
            dt: 0.1,
            wheelbase: 2.7,
            accel_bound: 3.0,
            steer_bound: 0.5,
            human_accel_bound: 3.0,
            human_steer_bound: 0.5,
            horizon: 30,
        }
    }
}

impl DrivingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.dt > 0.0 && self.wheelbase > 0.0) {
            return Err(Error::config("eta, dt and wheelbase must be positive"));
        }
        if self.r_u.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::config("driving R_u must be positive"));
        }
        let bounds = [self.accel_bound, self.steer_bound, self.human_accel_bound, self.human_steer_bound];
        if bounds.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::config("driving control bounds must be positive"));
        }
        if self.horizon < 2 {
            return Err(Error::config("driving horizon must be at least 2"));
        }
        Ok(())
    }
}

/// One explicit Euler step of the kinematic bicycle for the agent whose
/// state starts at `offset`.
fn bicycle_step(x: &mut State, offset: usize, accel: f64, steer: f64, dt: f64, wheelbase: f64) {
    let (theta, v) = (x[offset + 2], x[offset + 3]);
    x[offset] += v * theta.cos() * dt;
    x[offset + 1] += v * theta.sin() * dt;
    x[offset + 2] += v / wheelbase * steer.tan() * dt;
    x[offset + 3] += accel * dt;
}

pub fn driving_game(params: &DrivingParams) -> Result<GameDefinition> {
    params.validate()?;
    let (dt, wheelbase) = (params.dt, params.wheelbase);
    let dynamics = move |x: &State, u: &Vector, w: &Vector| {
        let mut next = x.clone();
        bicycle_step(&mut next, 0, u[0], u[1], dt, wheelbase);
        bicycle_step(&mut next, 4, w[0], w[1], dt, wheelbase);
        next
    };
    let p = params.clone();
    let stage_cost = move |x: &State, u: &Vector, _w: &Vector| {
        let goal = (x[0] - p.goal[0]).powi(2) + (x[1] - p.goal[1]).powi(2);
        let gap = (x[0] - x[4]).powi(2) + (x[1] - x[5]).powi(2);
        goal + p.eta * (-gap / p.eta).exp() + p.r_u[0] * u[0] * u[0] + p.r_u[1] * u[1] * u[1]
    };
    let goal = params.goal;
    let terminal_cost = move |x: &State| (x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2);
    GameDefinition::new(
        params.horizon,
        8,
        Bounds::new(
            vec![-params.accel_bound, -params.steer_bound],
            vec![params.accel_bound, params.steer_bound],
        )?,
        Bounds::new(
            vec![-params.human_accel_bound, -params.human_steer_bound],
            vec![params.human_accel_bound, params.human_steer_bound],
        )?,
        Arc::new(dynamics),
        Arc::new(stage_cost),
        Arc::new(terminal_cost),
    )
}

/// Joint driving state from per-agent `(px, py, θ, v)`.
pub fn driving_state(robot: [f64; 4], human: [f64; 4]) -> State {
    DVector::from_iterator(8, robot.into_iter().chain(human))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ActionTrajectory, JointTrajectory};
    use nalgebra::dvector;

    #[test]
    fn straight_coasting_step() {
        let game = driving_game(&DrivingParams::default()).unwrap();
        let x = driving_state([0.0, 0.0, 0.0, 1.0], [5.0, 5.0, 0.0, 0.0]);
        let next = game.step(&x, &dvector![0.0, 0.0], &dvector![0.0, 0.0]).unwrap();
        assert!((next[0] - 0.1).abs() < 1e-15);
        assert_eq!(next[1], 0.0);
        assert_eq!(next[2], 0.0);
        assert_eq!(next[3], 1.0);
        assert_eq!(next.rows(4, 4), x.rows(4, 4));
    }

    #[test]
    fn steering_turns_heading_by_bicycle_rate() {
        let p = DrivingParams::default();
        let game = driving_game(&p).unwrap();
        let x = driving_state([0.0, 0.0, 0.0, 2.0], [5.0, 5.0, 0.0, 0.0]);
        let next = game.step(&x, &dvector![1.0, 0.3], &dvector![0.0, 0.0]).unwrap();
        assert!((next[2] - 2.0 / p.wheelbase * 0.3f64.tan() * p.dt).abs() < 1e-15);
        assert!((next[3] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn proximity_term_limits() {
        let p = DrivingParams::default();
        let game = driving_game(&p).unwrap();
        let zero = dvector![0.0, 0.0];
        let on_top = driving_state([p.goal[0], p.goal[1], 0.0, 0.0], [p.goal[0], p.goal[1], 0.0, 0.0]);
        assert!((game.stage_cost(&on_top, &zero, &zero) - p.eta).abs() < 1e-12);
        let far = driving_state([p.goal[0], p.goal[1], 0.0, 0.0], [1e3, 1e3, 0.0, 0.0]);
        assert_eq!(game.stage_cost(&far, &zero, &zero), 0.0);
    }

    #[test]
    fn full_throttle_distance_is_arithmetic_series() {
        let p = DrivingParams::default();
        let game = driving_game(&p).unwrap();
        let traj = JointTrajectory::new(
            driving_state([0.0; 4], [0.0, 20.0, 0.0, 0.0]),
            ActionTrajectory::new(vec![dvector![p.accel_bound, 0.0]; p.horizon]),
            ActionTrajectory::zeros(p.horizon, 2),
        )
        .unwrap();
        let states = game.rollout(&traj).unwrap();
        let n = p.horizon as f64;
        let expected = p.accel_bound * p.dt * p.dt * n * (n - 1.0) / 2.0;
        assert!((states[p.horizon][0] - expected).abs() < 1e-9);
    }
}
