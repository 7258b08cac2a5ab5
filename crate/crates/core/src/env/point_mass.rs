//! Planar point-mass robot among `k` point-mass humans.
//!
//! State is `[p_R; p_H1; …; p_Hk]` (metres) and each agent moves by its own
//! action per step. Human actions also push the robot through
//! `disturbance_gain`: `p_R' = p_R + u + γ Σ w_i`, `p_Hi' = p_Hi + w_i`.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Bounds, GameDefinition, State, Vector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassParams {
    pub goal: [f64; 2],
    pub q_goal: f64,
    pub r_u: f64,
    pub r_w: f64,
    /// Enables the proximity well `weight · max(0, radius² − d²)` per human.
    pub proximity: bool,
    pub proximity_weight: f64,
    pub proximity_radius: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Robot box bound per axis (m per step).
    pub action_bound: f64,
    pub human_action_bound: f64,
    pub disturbance_gain: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            goal: [5.0, 0.0],
            q_goal: 1.0,
            r_u: 1.0,
            r_w: 50.0,
            proximity: true,
            proximity_weight: 20.0,
            proximity_radius: 1.5,
            horizon: 30,
            action_bound: 0.5,
            human_action_bound: 0.5,
            disturbance_gain: 1.0,
        }
    }
}

impl PointMassParams {
    /// Quadratic costs, linear dynamics, no proximity term and bounds wide
    /// enough that the LQ saddle is interior: the game is exactly LQ.
    pub fn pure_lq() -> Self {
        Self {
            proximity: false,
            r_w: 150.0,
            action_bound: 10.0,
            human_action_bound: 10.0,
            disturbance_gain: 0.5,
            ..Self::default()
        }
    }

    /// Crowd-navigation setting: humans do not push the robot and only
    /// matter through proximity.
    pub fn crowd() -> Self {
        Self {
            goal: [8.0, 0.0],
            r_w: 1.0,
            proximity_weight: 40.0,
            proximity_radius: 1.5,
            horizon: 15,
            disturbance_gain: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.q_goal, self.r_u, self.r_w];
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("point-mass weights must be positive"));
        }
        if self.proximity && !(self.proximity_weight > 0.0 && self.proximity_radius > 0.0) {
            return Err(Error::config("proximity weight and radius must be positive"));
        }
        if self.horizon < 2 {
            return Err(Error::config("point-mass horizon must be at least 2"));
        }
        if !(self.action_bound > 0.0 && self.human_action_bound > 0.0) {
            return Err(Error::config("action bounds must be positive"));
        }
        if !self.disturbance_gain.is_finite() {
            return Err(Error::config("disturbance gain must be finite"));
        }
        Ok(())
    }

    /// `weight · max(0, radius² − d²)`, or zero when proximity is disabled.
    pub fn proximity_cost(&self, squared_distance: f64) -> f64 {
        if self.proximity {
            self.proximity_weight * (self.proximity_radius.powi(2) - squared_distance).max(0.0)
        } else {
            0.0
        }
    }
}

fn goal_term(params: &PointMassParams, x: &State) -> f64 {
    params.q_goal * ((x[0] - params.goal[0]).powi(2) + (x[1] - params.goal[1]).powi(2))
}

pub fn point_mass_game(params: &PointMassParams) -> Result<GameDefinition> {
    multi_human_game(1, params)
}

/// Point-mass game with `k` humans stacked into the state and the human
/// action.
pub fn multi_human_game(k: usize, params: &PointMassParams) -> Result<GameDefinition> {
    params.validate()?;
    let gamma = params.disturbance_gain;
    let dynamics = move |x: &State, u: &Vector, w: &Vector| {
        let mut next = x.clone();
        for i in 0..k {
            next[2 + 2 * i] += w[2 * i];
            next[3 + 2 * i] += w[2 * i + 1];
            next[0] += gamma * w[2 * i];
            next[1] += gamma * w[2 * i + 1];
        }
        next[0] += u[0];
        next[1] += u[1];
        next
    };
    let stage_params = params.clone();
    let stage_cost = move |x: &State, u: &Vector, w: &Vector| {
        let p = &stage_params;
        let proximity: f64 = (0..k)
            .map(|i| p.proximity_cost((x[0] - x[2 + 2 * i]).powi(2) + (x[1] - x[3 + 2 * i]).powi(2)))
            .sum();
        goal_term(p, x) + p.r_u * u.norm_squared() - p.r_w * w.norm_squared() + proximity
    };
    let terminal_params = params.clone();
    let terminal_cost = move |x: &State| goal_term(&terminal_params, x);
    GameDefinition::new(
        params.horizon,
        2 + 2 * k,
        Bounds::symmetric(2, params.action_bound),
        Bounds::symmetric(2 * k, params.human_action_bound),
        Arc::new(dynamics),
        Arc::new(stage_cost),
        Arc::new(terminal_cost),
    )
}

/// Stacks robot and human positions into a point-mass state.
pub fn point_mass_state(robot: [f64; 2], humans: &[[f64; 2]]) -> State {
    let mut values = vec![robot[0], robot[1]];
    values.extend(humans.iter().flat_map(|h| h.iter().copied()));
    DVector::from_vec(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{ActionTrajectory, JointTrajectory};
    use nalgebra::dvector;

    #[test]
    fn one_step_moves_robot_by_action_plus_disturbance() {
        let game = point_mass_game(&PointMassParams::default()).unwrap();
        let x = point_mass_state([0.0, 0.0], &[[4.0, 4.0]]);
        let next = game.step(&x, &dvector![1.0, 0.0], &dvector![0.0, 0.5]).unwrap();
        assert_eq!(next, dvector![1.0, 0.5, 4.0, 4.5]);
        let crowd = point_mass_game(&PointMassParams::crowd()).unwrap();
        let next = crowd.step(&x, &dvector![0.5, 0.0], &dvector![0.0, 0.5]).unwrap();
        assert_eq!(next, dvector![0.5, 0.0, 4.0, 4.5]);
    }

    #[test]
    fn at_goal_with_distant_human_costs_nothing() {
        let params = PointMassParams::default();
        let game = point_mass_game(&params).unwrap();
        let x = point_mass_state(params.goal, &[[50.0, 50.0]]);
        assert_eq!(game.stage_cost(&x, &dvector![0.0, 0.0], &dvector![0.0, 0.0]), 0.0);
    }

    #[test]
    fn dimensions_stack_per_human() {
        let game = multi_human_game(3, &PointMassParams::default()).unwrap();
        assert_eq!(game.state_dim(), 8);
        assert_eq!(game.human_dim(), 6);
        let empty = multi_human_game(0, &PointMassParams::default()).unwrap();
        assert_eq!(empty.state_dim(), 2);
        assert_eq!(empty.human_dim(), 0);
    }

    #[test]
    fn two_human_cost_is_sum_of_single_human_proximity() {
        let params = PointMassParams::crowd();
        let both = multi_human_game(2, &params).unwrap();
        let single = multi_human_game(1, &params).unwrap();
        let zero = dvector![0.0, 0.0];
        let (r, h1, h2) = ([1.0, 0.2], [1.5, 0.0], [0.4, 0.9]);
        let u = dvector![0.3, -0.1];
        let w1 = dvector![0.1, 0.2];
        let w2 = dvector![-0.2, 0.0];
        let joint = both.stage_cost(&point_mass_state(r, &[h1, h2]), &u, &dvector![0.1, 0.2, -0.2, 0.0]);
        let c1 = single.stage_cost(&point_mass_state(r, &[h1]), &u, &w1);
        let c2 = single.stage_cost(&point_mass_state(r, &[h2]), &u, &w2);
        let shared = single.stage_cost(&point_mass_state(r, &[[100.0, 100.0]]), &u, &zero);
        assert!((joint - (c1 + c2 - shared)).abs() < 1e-12);
    }

    #[test]
    fn proximity_well_is_zero_outside_radius() {
        let p = PointMassParams::default();
        assert_eq!(p.proximity_cost(p.proximity_radius.powi(2) + 1e-9), 0.0);
        assert_eq!(p.proximity_cost(0.0), p.proximity_weight * p.proximity_radius.powi(2));
        let off = PointMassParams::pure_lq();
        assert_eq!(off.proximity_cost(0.0), 0.0);
    }

    #[test]
    fn rollout_matches_cumulative_sum() {
        let game = point_mass_game(&PointMassParams { horizon: 2, ..PointMassParams::default() }).unwrap();
        let traj = JointTrajectory::new(
            point_mass_state([0.0, 0.0], &[[3.0, 3.0]]),
            ActionTrajectory::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0]]),
            ActionTrajectory::zeros(2, 2),
        )
        .unwrap();
        let states = game.rollout(&traj).unwrap();
        assert_eq!(states[2], dvector![1.0, 0.0, 3.0, 3.0]);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = PointMassParams { r_u: 0.0, ..PointMassParams::default() };
        assert!(point_mass_game(&bad).is_err());
        let short = PointMassParams { horizon: 1, ..PointMassParams::default() };
        assert!(point_mass_game(&short).is_err());
    }
}
