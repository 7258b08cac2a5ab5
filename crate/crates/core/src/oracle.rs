//! Reference solvers: exhaustive open-loop min-max on small action grids,
//! and iterated LQ.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ActionTrajectory, GameDefinition, JointTrajectory, State, Vector};
use crate::lq::{lq_seed, LqOptions};

/// Hard cap on cost evaluations for exhaustive enumeration.
pub const EVALUATION_CAP: u128 = 10_000_000;

/// A game whose agents pick each action from a finite set.
#[derive(Clone, Debug)]
pub struct DiscretizedGame {
    pub base: GameDefinition,
    pub robot_grid: Vec<Vector>,
    pub human_grid: Vec<Vector>,
    /// Evaluation budget, never above [`EVALUATION_CAP`].
    pub budget: u128,
}

impl DiscretizedGame {
    pub fn new(base: GameDefinition, robot_grid: Vec<Vector>, human_grid: Vec<Vector>) -> Result<Self> {
        if robot_grid.is_empty() || human_grid.is_empty() {
            return Err(Error::config("action grids must be non-empty"));
        }
        if !robot_grid.iter().all(|a| base.robot_bounds().contains(a)) {
            return Err(Error::config("robot grid leaves the action bounds"));
        }
        if !human_grid.iter().all(|a| base.human_bounds().contains(a)) {
            return Err(Error::config("human grid leaves the action bounds"));
        }
        Ok(Self {
            base,
            robot_grid,
            human_grid,
            budget: EVALUATION_CAP,
        })
    }

    /// Per-axis levels `{−b, 0, b}` combined over every action dimension.
    pub fn three_level(base: GameDefinition) -> Result<Self> {
        let robot = tensor_grid(base.robot_bounds().lower.as_slice(), base.robot_bounds().upper.as_slice());
        let human = tensor_grid(base.human_bounds().lower.as_slice(), base.human_bounds().upper.as_slice());
        Self::new(base, robot, human)
    }

    /// The base game played through the grids: every action is replaced by
    /// its nearest grid point before it reaches the dynamics or the cost.
    /// Continuous samplers run on this game search the grid game itself.
    pub fn snapped_game(&self) -> Result<GameDefinition> {
        let grids = Arc::new((self.robot_grid.clone(), self.human_grid.clone()));
        let dynamics = Arc::clone(self.base.dynamics());
        let (cost_game, end_game) = (self.base.clone(), self.base.clone());
        let cost_grids = Arc::clone(&grids);
        GameDefinition::new(
            self.base.horizon(),
            self.base.state_dim(),
            self.base.robot_bounds().clone(),
            self.base.human_bounds().clone(),
            Arc::new(move |x: &State, u: &Vector, w: &Vector| {
                dynamics(x, nearest(&grids.0, u), nearest(&grids.1, w))
            }),
            Arc::new(move |x: &State, u: &Vector, w: &Vector| {
                cost_game.stage_cost(x, nearest(&cost_grids.0, u), nearest(&cost_grids.1, w))
            }),
            Arc::new(move |x: &State| end_game.terminal_cost(x)),
        )
    }

    fn sequence_count(grid: usize, horizon: usize) -> u128 {
        (grid as u128).saturating_pow(horizon as u32)
    }

    pub fn robot_sequences(&self) -> u128 {
        Self::sequence_count(self.robot_grid.len(), self.base.horizon())
    }

    pub fn human_sequences(&self) -> u128 {
        Self::sequence_count(self.human_grid.len(), self.base.horizon())
    }

    /// Sequence number `index` in lexicographic order (timestep 0 most
    /// significant).
    fn sequence(&self, grid: &[Vector], mut index: u128) -> ActionTrajectory {
        let horizon = self.base.horizon();
        let n = grid.len() as u128;
        let mut actions = vec![grid[0].clone(); horizon];
        for t in (0..horizon).rev() {
            actions[t] = grid[(index % n) as usize].clone();
            index /= n;
        }
        ActionTrajectory::new(actions)
    }

    fn check_budget(&self) -> Result<u128> {
        let required = self.robot_sequences().saturating_mul(self.human_sequences());
        let budget = self.budget.min(EVALUATION_CAP);
        if required > budget {
            return Err(Error::Budget { required, budget });
        }
        Ok(required)
    }
}

fn tensor_grid(lower: &[f64], upper: &[f64]) -> Vec<Vector> {
    let dim = lower.len();
    let levels: Vec<[f64; 3]> = lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| [lo, if lo <= 0.0 && hi >= 0.0 { 0.0 } else { 0.5 * (lo + hi) }, hi])
        .collect();
    (0..3usize.pow(dim as u32))
        .map(|mut code| {
            let mut a = Vector::zeros(dim);
            for d in (0..dim).rev() {
                a[d] = levels[d][code % 3];
                code /= 3;
            }
            a
        })
        .collect()
}

/// Witnesses and value of an exhaustive search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeSolution {
    pub value: f64,
    pub u_seq: ActionTrajectory,
    pub w_seq: ActionTrajectory,
    pub evaluations: u128,
}

/// Best (index, value) under `better`, keeping the lowest index on ties.
fn pick(a: (u128, f64), b: (u128, f64), better: fn(f64, f64) -> bool) -> (u128, f64) {
    if better(b.1, a.1) || (b.1 == a.1 && b.0 < a.0) {
        b
    } else {
        a
    }
}

fn greater(a: f64, b: f64) -> bool {
    a > b
}

fn less(a: f64, b: f64) -> bool {
    a < b
}

/// `max_w J(u, w)` over the human grid, with the lexicographically first
/// maximizer.
pub fn best_human_response(dg: &DiscretizedGame, x0: &State, u: &ActionTrajectory) -> Result<(ActionTrajectory, f64)> {
    let mut best = (0u128, f64::NEG_INFINITY);
    for j in 0..dg.human_sequences() {
        let c = dg.base.cost_of(x0, u, &dg.sequence(&dg.human_grid, j))?;
        best = pick(best, (j, c), greater);
    }
    Ok((dg.sequence(&dg.human_grid, best.0), best.1))
}

fn best_robot_response(dg: &DiscretizedGame, x0: &State, w: &ActionTrajectory) -> Result<(u128, f64)> {
    let mut best = (0u128, f64::INFINITY);
    for i in 0..dg.robot_sequences() {
        let c = dg.base.cost_of(x0, &dg.sequence(&dg.robot_grid, i), w)?;
        best = pick(best, (i, c), less);
    }
    Ok(best)
}

/// Open-loop `min_u max_w J(u, w)` by enumeration. Independent of the number
/// of worker threads.
pub fn brute_force_ne(dg: &DiscretizedGame, x0: &State) -> Result<NeSolution> {
    let evaluations = dg.check_budget()?;
    let per_robot: Vec<(u128, f64)> = (0..dg.robot_sequences())
        .into_par_iter()
        .map(|i| {
            let u = dg.sequence(&dg.robot_grid, i);
            best_human_response(dg, x0, &u).map(|(_, v)| (i, v))
        })
        .collect::<Result<_>>()?;
    let (i, value) = per_robot
        .into_iter()
        .fold((0, f64::INFINITY), |acc, cand| pick(acc, cand, less));
    let u_seq = dg.sequence(&dg.robot_grid, i);
    let (w_seq, _) = best_human_response(dg, x0, &u_seq)?;
    Ok(NeSolution {
        value,
        u_seq,
        w_seq,
        evaluations: evaluations + dg.human_sequences(),
    })
}

/// Open-loop `max_w min_u J(u, w)`, the lower value of the same grid game.
pub fn brute_force_maxmin(dg: &DiscretizedGame, x0: &State) -> Result<NeSolution> {
    let evaluations = dg.check_budget()?;
    let per_human: Vec<(u128, f64)> = (0..dg.human_sequences())
        .into_par_iter()
        .map(|j| {
            let w = dg.sequence(&dg.human_grid, j);
            best_robot_response(dg, x0, &w).map(|(_, v)| (j, v))
        })
        .collect::<Result<_>>()?;
    let (j, value) = per_human
        .into_iter()
        .fold((0, f64::NEG_INFINITY), |acc, cand| pick(acc, cand, greater));
    let w_seq = dg.sequence(&dg.human_grid, j);
    let (i, _) = best_robot_response(dg, x0, &w_seq)?;
    Ok(NeSolution {
        value,
        u_seq: dg.sequence(&dg.robot_grid, i),
        w_seq,
        evaluations,
    })
}

/// Replaces every action by its nearest grid point (first on ties).
pub fn snap_to_grid(traj: &ActionTrajectory, grid: &[Vector]) -> ActionTrajectory {
    ActionTrajectory::new(traj.iter().map(|a| nearest(grid, a).clone()).collect())
}

fn nearest<'a>(grid: &'a [Vector], a: &'a Vector) -> &'a Vector {
    let distance = |p: &Vector| p.iter().zip(a.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    grid.iter()
        .map(|p| (p, distance(p)))
        .min_by(|(_, dp), (_, dq)| dp.total_cmp(dq))
        .map_or(a, |(p, _)| p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlqOptions {
    pub iters: usize,
    /// Blend factor towards each new LQ solution.
    pub step: f64,
    pub lq: LqOptions,
}

impl Default for IlqOptions {
    fn default() -> Self {
        Self {
            iters: 10,
            step: 1.0,
            lq: LqOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlqResult {
    pub trajectory: JointTrajectory,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TRAJECTORY_TOL: f64 = 1e-6;
const MIN_STEP: f64 = 1.0 / 64.0;

fn blend(game: &GameDefinition, old: &JointTrajectory, cand: &JointTrajectory, step: f64) -> Result<JointTrajectory> {
    let mix = |a: &ActionTrajectory, b: &ActionTrajectory| {
        ActionTrajectory::new(a.iter().zip(b.iter()).map(|(x, y)| x + (y - x) * step).collect())
    };
    JointTrajectory::new(
        old.x0.clone(),
        game.robot_bounds().clamp_trajectory(&mix(&old.robot, &cand.robot)),
        game.human_bounds().clamp_trajectory(&mix(&old.human, &cand.human)),
    )
}

/// Iterated LQ from `initial`: re-expand about the current trajectory, solve
/// the LQ game, move `step` of the way to its forward pass. After the first
/// iterate, a move that raises the cost is retried with half the step.
pub fn ilq_solve_from(game: &GameDefinition, initial: &JointTrajectory, opts: &IlqOptions) -> Result<IlqResult> {
    if opts.iters == 0 {
        return Err(Error::config("ilq needs at least one iteration"));
    }
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(Error::config("ilq step must lie in (0, 1]"));
    }
    let x0 = &initial.x0;
    let mut current = initial.clone();
    let mut cost = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..opts.iters {
        iterations = k + 1;
        let (candidate, _) = lq_seed(game, x0, &current, &opts.lq)?;
        let mut step = opts.step;
        let next = loop {
            let trial = blend(game, &current, &candidate, step)?;
            let trial_cost = game.cumulative_cost(&trial)?;
            if k == 0 || trial_cost <= cost || step <= MIN_STEP {
                break Some((trial, trial_cost));
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some((next, next_cost)) = next else { break };
        if k > 0 && next_cost > cost {
            break;
        }
        let change = next
            .robot
            .max_abs_difference(&current.robot)
            .max(next.human.max_abs_difference(&current.human));
        current = next;
        cost = next_cost;
        if change < TRAJECTORY_TOL {
            converged = true;
            break;
        }
    }
    Ok(IlqResult {
        trajectory: current,
        cost,
        iterations,
        converged,
    })
}

/// Iterated LQ from the zero-action trajectory.
pub fn ilq_solve(game: &GameDefinition, x0: &State, iters: usize, step: f64) -> Result<IlqResult> {
    let initial = JointTrajectory::new(
        x0.clone(),
        ActionTrajectory::zeros(game.horizon(), game.robot_dim()),
        ActionTrajectory::zeros(game.horizon(), game.human_dim()),
    )?;
    ilq_solve_from(
        game,
        &initial,
        &IlqOptions {
            iters,
            step,
            lq: LqOptions::default(),
        },
    )
}
