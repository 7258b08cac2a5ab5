//! Receding-horizon safety filter: LQ seed, Metropolis-Hastings refinement,
//! execute the first action, replan.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{nominal_trajectory, HumanLayout, NominalHumanModel};
use crate::error::{Error, Result};
use crate::game::{ActionTrajectory, GameDefinition, JointTrajectory, State, Vector};
use crate::lq::{lq_seed, LqOptions};
use crate::mh::{refine, SamplerConfig};
use crate::oracle::{brute_force_ne, ilq_solve_from, DiscretizedGame, IlqOptions};

/// Planner behind the filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// LQ seed refined by the nested sampler.
    Mclq,
    /// LQ seed only.
    Lq,
    /// Iterated LQ.
    Ilq,
    /// Brute-force equilibrium on a discretized game.
    Ne,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mclq => "mclq",
            Method::Lq => "lq",
            Method::Ilq => "ilq",
            Method::Ne => "ne",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mclq" => Ok(Method::Mclq),
            "lq" => Ok(Method::Lq),
            "ilq" => Ok(Method::Ilq),
            "ne" => Ok(Method::Ne),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub sampler: SamplerConfig,
    pub lq: LqOptions,
    pub ilq: IlqOptions,
    /// Timesteps between replans.
    pub replan_every: usize,
    pub nominal_human: NominalHumanModel,
    pub layout: HumanLayout,
    pub method: Method,
    /// Expand around the previous plan shifted forward instead of the
    /// zero-action rollout.
    pub warm_start: bool,
    /// Keep the LQ robot sequence when it does better than the refined one
    /// against the refined worst-case human.
    pub keep_better_seed: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            sampler: SamplerConfig::default(),
            lq: LqOptions::default(),
            ilq: IlqOptions::default(),
            replan_every: 1,
            nominal_human: NominalHumanModel::Zero,
            layout: HumanLayout::Planar {
                count: 1,
                disturbance_gain: 1.0,
            },
            method: Method::Mclq,
            warm_start: false,
            keep_better_seed: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan_every == 0 {
            return Err(Error::config("replan_every must be at least 1"));
        }
        if self.horizon < 2 {
            return Err(Error::config("filter horizon must be at least 2"));
        }
        self.sampler.validate()
    }
}

/// One planning call and its telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    /// Executed robot sequence and the worst-case human it was planned against.
    pub plan: JointTrajectory,
    /// LQ (or ILQ) trajectory the refinement started from.
    pub seed: JointTrajectory,
    /// Seed robot sequence against the worst-case human of `plan`.
    pub lq_cost: f64,
    /// Cost of `plan`.
    pub refined_cost: f64,
    pub ms_lq: f64,
    pub ms_mh: f64,
    /// Timestep at which the plan was made.
    pub t: usize,
    pub lq_converged: bool,
    /// True when the seed robot sequence replaced the refined one.
    pub kept_seed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PlanRecord {
    fn failed(game: &GameDefinition, x0: &State, t: usize, err: &Error) -> Self {
        let horizon = game.horizon();
        let robot = game
            .robot_bounds()
            .clamp_trajectory(&ActionTrajectory::zeros(horizon, game.robot_dim()));
        let human = ActionTrajectory::zeros(horizon, game.human_dim());
        let plan = JointTrajectory {
            x0: x0.clone(),
            robot,
            human,
        };
        Self {
            seed: plan.clone(),
            plan,
            lq_cost: f64::NAN,
            refined_cost: f64::NAN,
            ms_lq: 0.0,
            ms_mh: 0.0,
            t,
            lq_converged: false,
            kept_seed: false,
            error: Some(err.to_string()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sampler seed for a plan made at timestep `t`.
pub fn plan_seed(base: u64, t: usize) -> u64 {
    splitmix64(base ^ splitmix64(t as u64))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Plans from `x0` at timestep `t`. `warm_robot` replaces the zero-action
/// expansion point when given.
pub fn plan_at(
    game: &GameDefinition,
    x0: &State,
    cfg: &FilterConfig,
    t: usize,
    warm_robot: Option<&ActionTrajectory>,
) -> Result<PlanRecord> {
    cfg.validate()?;
    let game = if game.horizon() == cfg.horizon {
        game.clone()
    } else {
        game.with_horizon(cfg.horizon)?
    };
    let horizon = cfg.horizon;
    let nominal_w = nominal_trajectory(&cfg.nominal_human, &cfg.layout, x0, horizon, game.human_bounds());
    let nominal_u = match warm_robot {
        Some(u) if u.len() == horizon => u.clone(),
        _ => ActionTrajectory::zeros(horizon, game.robot_dim()),
    };
    let nominal = JointTrajectory::new(x0.clone(), nominal_u, nominal_w.clone())?;

    if cfg.method == Method::Ne {
        let start = Instant::now();
        let ne = brute_force_ne(&DiscretizedGame::three_level(game)?, x0)?;
        let plan = JointTrajectory::new(x0.clone(), ne.u_seq, ne.w_seq)?;
        return Ok(PlanRecord {
            seed: plan.clone(),
            plan,
            lq_cost: ne.value,
            refined_cost: ne.value,
            ms_lq: elapsed_ms(start),
            ms_mh: 0.0,
            t,
            lq_converged: true,
            kept_seed: false,
            error: None,
        });
    }

    let lq_start = Instant::now();
    let (seed, lq_converged) = match cfg.method {
        Method::Ilq => {
            let ilq = ilq_solve_from(&game, &nominal, &cfg.ilq)?;
            (ilq.trajectory, ilq.converged)
        }
        _ => {
            let (seed, gains) = lq_seed(&game, x0, &nominal, &cfg.lq)?;
            (seed, gains.converged)
        }
    };
    let ms_lq = elapsed_ms(lq_start);

    if cfg.method != Method::Mclq {
        let cost = game.cumulative_cost(&seed)?;
        return Ok(PlanRecord {
            plan: seed.clone(),
            seed,
            lq_cost: cost,
            refined_cost: cost,
            ms_lq,
            ms_mh: 0.0,
            t,
            lq_converged,
            kept_seed: false,
            error: None,
        });
    }

    let mh_start = Instant::now();
    let sampler = SamplerConfig {
        seed: plan_seed(cfg.sampler.seed, t),
        ..cfg.sampler.clone()
    };
    let refined = refine(&game, &seed, &nominal_w, &sampler)?;
    let worst = refined.refined.human.clone();
    let seed_robot = game.robot_bounds().clamp_trajectory(&seed.robot);
    let lq_cost = game.cost_of(x0, &seed_robot, &worst)?;
    let keep_seed = cfg.keep_better_seed && lq_cost < refined.final_cost;
    let (plan, refined_cost) = if keep_seed {
        (JointTrajectory::new(x0.clone(), seed_robot, worst)?, lq_cost)
    } else {
        (refined.refined, refined.final_cost)
    };
    let ms_mh = elapsed_ms(mh_start);
    Ok(PlanRecord {
        plan,
        seed,
        lq_cost,
        refined_cost,
        ms_lq,
        ms_mh,
        t,
        lq_converged,
        kept_seed: keep_seed,
        error: None,
    })
}

/// Cold-start plan at timestep 0.
pub fn plan(game: &GameDefinition, x0: &State, cfg: &FilterConfig) -> Result<PlanRecord> {
    plan_at(game, x0, cfg, 0, None)
}

/// One filter tick at timestep `t`: reuses `carry` while it is younger than
/// `replan_every`, otherwise replans at `x_observed`. Returns the robot action
/// to execute and the active plan. Planning failures yield the (clamped) zero
/// action and a record carrying the error.
pub fn filter_step(
    game: &GameDefinition,
    x_observed: &State,
    cfg: &FilterConfig,
    carry: Option<&PlanRecord>,
    t: usize,
) -> (Vector, PlanRecord) {
    if let Some(active) = carry.filter(|c| !c.is_error()) {
        let age = t.saturating_sub(active.t);
        if t >= active.t && age < cfg.replan_every && age < active.plan.horizon() {
            let u = game.robot_bounds().clamp(&active.plan.robot[age]);
            return (u, active.clone());
        }
    }
    let warm = match carry {
        Some(c) if cfg.warm_start && !c.is_error() => {
            let shift = t.saturating_sub(c.t);
            let last = c.plan.robot.as_slice().last().cloned();
            last.map(|fill| c.plan.robot.shifted(shift, &fill))
        }
        _ => None,
    };
    match plan_at(game, x_observed, cfg, t, warm.as_ref()) {
        Ok(record) => {
            let u = game.robot_bounds().clamp(&record.plan.robot[0]);
            (u, record)
        }
        Err(err) => {
            tracing::warn!(t, error = %err, "planning failed, holding zero action");
            let record = PlanRecord::failed(game, x_observed, t, &err);
            let u = record.plan.robot[0].clone();
            (u, record)
        }
    }
}
