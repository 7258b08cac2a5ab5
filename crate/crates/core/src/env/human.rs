//! Simulated humans and nominal predictions of human motion.

use nalgebra::{dvector, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HumanLayout;
use crate::game::{ActionTrajectory, Bounds, State, Vector};
use crate::mh::serde_bound;

pub const DEFAULT_ALPHA: f64 = 7.5;
pub const DEFAULT_LOOKAHEAD: usize = 5;

/// Bounded-rational human: picks grid actions with probability
/// `∝ exp(−α J_H)`, where `J_H` is its own goal-reaching cost over a short
/// lookahead in which the robot repeats its last action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannHuman {
    /// Rationality; `0` is uniformly random, `∞` always optimal.
    #[serde(with = "serde_bound")]
    pub alpha: f64,
    pub goal: [f64; 2],
    pub lookahead: usize,
    pub action_grid: Vec<Vec<f64>>,
    /// Weight of the personal-space term `max(0, radius² − d²)` in `J_H`.
    pub avoidance_weight: f64,
    pub avoidance_radius: f64,
}

impl BoltzmannHuman {
    pub fn new(goal: [f64; 2], action_grid: Vec<Vec<f64>>) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            goal,
            lookahead: DEFAULT_LOOKAHEAD,
            action_grid,
            avoidance_weight: 1.0,
            avoidance_radius: 1.0,
        }
    }

    /// Costs `J_H` of every grid action for human `index`.
    pub fn grid_costs(&self, layout: &HumanLayout, index: usize, x: &State, u_last: &Vector) -> Vec<f64> {
        self.action_grid
            .iter()
            .map(|a| self.lookahead_cost(layout, index, x, u_last, a))
            .collect()
    }

    fn lookahead_cost(&self, layout: &HumanLayout, index: usize, x: &State, u_last: &Vector, action: &[f64]) -> f64 {
        let mut x = x.clone();
        let mut total = 0.0;
        let steps = self.lookahead.max(1);
        for _ in 0..steps {
            layout.advance_pair(&mut x, index, u_last, action);
            let h = layout.human_position(&x, index);
            let r = layout.robot_position(&x);
            let goal_dist = ((h[0] - self.goal[0]).powi(2) + (h[1] - self.goal[1]).powi(2)).sqrt();
            let gap2 = (h[0] - r[0]).powi(2) + (h[1] - r[1]).powi(2);
            total += goal_dist + self.avoidance_weight * (self.avoidance_radius.powi(2) - gap2).max(0.0);
        }
        total / steps as f64
    }

    /// Samples an action for human `index` given the joint state and the
    /// robot's most recent action.
    pub fn sample(&self, layout: &HumanLayout, index: usize, x: &State, u_last: &Vector, rng: &mut impl Rng) -> Vector {
        let probs = boltzmann_probabilities(&self.grid_costs(layout, index, x, u_last), self.alpha);
        let pick = sample_index(&probs, rng);
        DVector::from_column_slice(&self.action_grid[pick])
    }
}

/// Softmax `p_i ∝ exp(−α c_i)`; `α = ∞` puts all mass on the first minimizer.
pub fn boltzmann_probabilities(costs: &[f64], alpha: f64) -> Vec<f64> {
    if costs.is_empty() {
        return Vec::new();
    }
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if alpha.is_infinite() {
        let first = costs.iter().position(|&c| c == best).unwrap_or(0);
        return (0..costs.len()).map(|i| if i == first { 1.0 } else { 0.0 }).collect();
    }
    let weights: Vec<f64> = costs.iter().map(|c| (-alpha * (c - best)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Eight compass directions at full and half speed, plus standing still.
pub fn point_mass_grid(bound: f64) -> Vec<Vec<f64>> {
    let mut grid = vec![vec![0.0, 0.0]];
    for speed in [bound, bound / 2.0] {
        for k in 0..8 {
            let angle = std::f64::consts::FRAC_PI_4 * k as f64;
            let (dx, dy) = (angle.cos(), angle.sin());
            // scale so that the larger component sits on the box bound
            let s = speed / dx.abs().max(dy.abs());
            grid.push(vec![clean(dx * s), clean(dy * s)]);
        }
    }
    grid
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-12 { 0.0 } else { v }
}

/// Three accelerations by five steering angles.
pub fn driving_grid(accel_bound: f64, steer_bound: f64) -> Vec<Vec<f64>> {
    let mut grid = Vec::with_capacity(15);
    for a in [-accel_bound, 0.0, accel_bound] {
        for s in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            grid.push(vec![a, s * steer_bound]);
        }
    }
    grid
}

/// Prediction `ξ̂_w` of what the humans will do, used as the centre of the
/// safety margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalHumanModel {
    /// Walk straight at `speed` (m per step) towards each goal, stopping on
    /// arrival. Bicycle humans keep their heading and speed.
    StraightLine { goals: Vec<[f64; 2]>, speed: f64 },
    /// Repeat one action; a single agent's action is reused for every human.
    ConstantVelocity { velocity: Vec<f64> },
    Zero,
}

pub fn nominal_trajectory(
    model: &NominalHumanModel,
    layout: &HumanLayout,
    x: &State,
    horizon: usize,
    bounds: &Bounds,
) -> ActionTrajectory {
    let dim = bounds.dim();
    let actions = match model {
        NominalHumanModel::Zero => vec![DVector::zeros(dim); horizon],
        NominalHumanModel::ConstantVelocity { velocity } => {
            let v = if velocity.len() == dim {
                DVector::from_column_slice(velocity)
            } else if !velocity.is_empty() && dim % velocity.len() == 0 {
                DVector::from_iterator(dim, velocity.iter().copied().cycle().take(dim))
            } else {
                DVector::zeros(dim)
            };
            vec![bounds.clamp(&v); horizon]
        }
        NominalHumanModel::StraightLine { goals, speed } => match layout {
            HumanLayout::Planar { count, .. } => {
                let mut positions: Vec<[f64; 2]> = (0..*count).map(|i| layout.human_position(x, i)).collect();
                (0..horizon)
                    .map(|_| {
                        let mut a = DVector::zeros(dim);
                        for (i, p) in positions.iter_mut().enumerate() {
                            let Some(goal) = goals.get(i) else { continue };
                            let step = straight_step(*p, *goal, *speed);
                            let clamped = bounds.clamp(&{
                                let mut full = DVector::zeros(dim);
                                full[2 * i] = step[0];
                                full[2 * i + 1] = step[1];
                                full
                            });
                            a[2 * i] = clamped[2 * i];
                            a[2 * i + 1] = clamped[2 * i + 1];
                            p[0] += a[2 * i];
                            p[1] += a[2 * i + 1];
                        }
                        a
                    })
                    .collect()
            }
            HumanLayout::Bicycle { .. } => vec![DVector::zeros(dim); horizon],
        },
    };
    ActionTrajectory::new(actions)
}

fn straight_step(p: [f64; 2], goal: [f64; 2], speed: f64) -> [f64; 2] {
    let (dx, dy) = (goal[0] - p[0], goal[1] - p[1]);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return [0.0, 0.0];
    }
    let step = speed.min(dist);
    [dx / dist * step, dy / dist * step]
}

/// Straight-line velocity of one planar human towards `goal`.
pub fn straight_line_action(p: [f64; 2], goal: [f64; 2], speed: f64) -> Vector {
    let s = straight_step(p, goal, speed);
    dvector![s[0], s[1]]
}
