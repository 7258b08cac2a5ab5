//! Interactive sessions: a live human drives one agent while the filter
//! controls the robot, one tick at a time.
//!
//! The robot's task is to circle a fixed centre; every tick its goal is
//! moved to a point a little ahead on the orbit.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::env::{driving_game, point_mass_game, DrivingParams, EnvKind, HumanLayout, NominalHumanModel, PointMassParams};
use crate::error::{Error, Result};
use crate::filter::{filter_step, FilterConfig, PlanRecord};
use crate::game::{GameDefinition, JointTrajectory, State, Vector};
use crate::mh::{serde_bound, SamplerConfig};

pub const DEFAULT_TICK_MS: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub env: EnvKind,
    pub tick_ms: u64,
    pub orbit_center: [f64; 2],
    pub orbit_radius: f64,
    /// Angle (rad) by which the goal leads the robot along the orbit.
    pub goal_lead: f64,
    pub collision_radius: f64,
    /// Planning horizon of the live filter.
    #[serde(rename = "T")]
    pub horizon: usize,
    pub sampler: SamplerConfig,
    /// When off, late plans are still used, which keeps replays exact.
    pub enforce_deadline: bool,
    pub robot_start: [f64; 2],
    pub human_start: [f64; 2],
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass,
            tick_ms: DEFAULT_TICK_MS,
            orbit_center: [0.0, 0.0],
            orbit_radius: 3.0,
            goal_lead: 0.6,
            collision_radius: crate::experiment::COLLISION_RADIUS,
            horizon: 15,
            sampler: SamplerConfig {
                outer_iters: 40,
                inner_iters: 10,
                ..SamplerConfig::default()
            },
            enforce_deadline: true,
            robot_start: [3.0, 0.0],
            human_start: [0.0, 0.0],
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.env == EnvKind::MultiHuman {
            return Err(Error::config("sessions support point_mass and driving arenas"));
        }
        if self.tick_ms == 0 {
            return Err(Error::config("tick_ms must be positive"));
        }
        if !(self.orbit_radius > 0.0) {
            return Err(Error::config("orbit_radius must be positive"));
        }
        self.sampler.validate()
    }

    fn tick(&self) -> Duration {
        Duration::from_millis(self.tick_ms)
    }
}

/// Messages a client sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Input { vx: f64, vy: f64 },
    SetLambda {
        #[serde(with = "serde_bound")]
        value: f64,
    },
    Reset,
}

/// Messages the server sends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateBroadcast),
    Ack(Ack),
    Error { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "of", rename_all = "snake_case")]
pub enum Ack {
    Input {
        clamped: bool,
    },
    SetLambda {
        #[serde(with = "serde_bound")]
        lambda: f64,
    },
    Reset,
}

/// World state after one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBroadcast {
    pub t: usize,
    /// Robot position.
    pub robot: [f64; 2],
    pub human: [f64; 2],
    /// Planned robot positions for the rest of the horizon.
    pub plan: Vec<[f64; 2]>,
    /// Human positions under the worst case the plan guards against.
    pub worst_case_human: Vec<[f64; 2]>,
    #[serde(with = "serde_bound")]
    pub lambda: f64,
    pub collisions: usize,
    pub revolutions: u64,
    pub ms_plan: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub error: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deadline_missed: bool,
}

/// Replayable input event, stamped with the tick it arrived before.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub tick: usize,
    pub message: ClientMessage,
}

/// Accumulated signed angle around a centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleCounter {
    last: f64,
    total: f64,
}

impl AngleCounter {
    pub fn new(angle: f64) -> Self {
        Self { last: angle, total: 0.0 }
    }

    /// Adds the shortest signed turn from the previous angle.
    pub fn update(&mut self, angle: f64) {
        let tau = std::f64::consts::TAU;
        let mut d = (angle - self.last) % tau;
        if d > std::f64::consts::PI {
            d -= tau;
        } else if d <= -std::f64::consts::PI {
            d += tau;
        }
        self.total += d;
        self.last = angle;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Completed full turns in either direction.
    pub fn revolutions(&self) -> u64 {
        (self.total.abs() / std::f64::consts::TAU).floor() as u64
    }
}

pub struct Session {
    pub id: u64,
    cfg: SessionConfig,
    filter: FilterConfig,
    x: State,
    t: usize,
    carry: Option<PlanRecord>,
    command: Vector,
    collisions: usize,
    angle: AngleCounter,
    min_distance: f64,
    log: Vec<LoggedCommand>,
    states: Vec<State>,
}

impl Session {
    pub fn new(id: u64, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = match cfg.env {
            EnvKind::Driving => {
                let p = DrivingParams::default();
                HumanLayout::Bicycle {
                    dt: p.dt,
                    wheelbase: p.wheelbase,
                }
            }
            _ => HumanLayout::Planar {
                count: 1,
                disturbance_gain: PointMassParams::default().disturbance_gain,
            },
        };
        let filter = FilterConfig {
            horizon: cfg.horizon,
            sampler: cfg.sampler.clone(),
            layout,
            ..FilterConfig::default()
        };
        let mut session = Self {
            id,
            filter,
            x: State::zeros(0),
            t: 0,
            carry: None,
            command: Vector::zeros(2),
            collisions: 0,
            angle: AngleCounter::new(0.0),
            min_distance: f64::INFINITY,
            log: Vec::new(),
            states: Vec::new(),
            cfg,
        };
        session.restart();
        Ok(session)
    }

    fn initial_state(&self) -> State {
        let (r, h) = (self.cfg.robot_start, self.cfg.human_start);
        match self.cfg.env {
            EnvKind::Driving => {
                // both cars start tangent to the orbit, heading anticlockwise
                let heading = |p: [f64; 2]| (p[1] - self.cfg.orbit_center[1]).atan2(p[0] - self.cfg.orbit_center[0]) + std::f64::consts::FRAC_PI_2;
                crate::env::driving_state([r[0], r[1], heading(r), 2.0], [h[0], h[1], heading(h), 0.0])
            }
            _ => DVector::from_vec(vec![r[0], r[1], h[0], h[1]]),
        }
    }

    fn restart(&mut self) {
        self.x = self.initial_state();
        self.t = 0;
        self.carry = None;
        self.command = Vector::zeros(2);
        self.collisions = 0;
        self.angle = AngleCounter::new(self.robot_angle());
        self.min_distance = self.filter.layout.min_distance(&self.x);
        self.states = vec![self.x.clone()];
    }

    fn robot_angle(&self) -> f64 {
        let p = self.filter.layout.robot_position(&self.x);
        (p[1] - self.cfg.orbit_center[1]).atan2(p[0] - self.cfg.orbit_center[0])
    }

    /// Goal a little ahead of the robot on the orbit.
    pub fn orbit_goal(&self) -> [f64; 2] {
        let a = self.robot_angle() + self.cfg.goal_lead;
        let c = self.cfg.orbit_center;
        [c[0] + self.cfg.orbit_radius * a.cos(), c[1] + self.cfg.orbit_radius * a.sin()]
    }

    fn game(&self) -> Result<GameDefinition> {
        let goal = self.orbit_goal();
        match self.cfg.env {
            EnvKind::Driving => driving_game(&DrivingParams {
                goal,
                horizon: self.cfg.horizon,
                ..DrivingParams::default()
            }),
            _ => point_mass_game(&PointMassParams {
                goal,
                horizon: self.cfg.horizon,
                ..PointMassParams::default()
            }),
        }
    }

    pub fn state(&self) -> &State {
        &self.x
    }

    pub fn lambda(&self) -> f64 {
        self.filter.sampler.lambda
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    pub fn revolutions(&self) -> u64 {
        self.angle.revolutions()
    }

    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    /// Every state since the last reset, starting with the initial one.
    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn command_log(&self) -> &[LoggedCommand] {
        &self.log
    }

    pub fn filter_config(&self) -> &FilterConfig {
        &self.filter
    }

    /// Routes one client message.
    pub fn handle(&mut self, message: ClientMessage) -> Result<Ack> {
        let ack = match &message {
            ClientMessage::Input { vx, vy } => self.handle_input(*vx, *vy)?,
            ClientMessage::SetLambda { value } => self.set_lambda(*value)?,
            ClientMessage::Reset => {
                self.restart();
                Ack::Reset
            }
        };
        self.log.push(LoggedCommand { tick: self.t, message });
        Ok(ack)
    }

    /// Replaces the buffered human command, clamped to the human's bounds.
    /// The command stays in force until replaced.
    pub fn handle_input(&mut self, vx: f64, vy: f64) -> Result<Ack> {
        if !(vx.is_finite() && vy.is_finite()) {
            return Err(Error::config("input must be finite"));
        }
        let bounds = self.game()?.human_bounds().clone();
        let raw = DVector::from_vec(vec![vx, vy]);
        let cmd = bounds.clamp(&raw);
        let clamped = cmd != raw;
        self.command = cmd;
        Ok(Ack::Input { clamped })
    }

    /// Sets the safety margin used from the next replan on; `∞` removes it.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<Ack> {
        if !(lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
        }
        self.filter.sampler.lambda = lambda;
        Ok(Ack::SetLambda { lambda })
    }

    /// Advances the world by one step.
    pub fn tick(&mut self) -> StateBroadcast {
        let game = match self.game() {
            Ok(g) => g,
            Err(err) => {
                tracing::warn!(session = self.id, error = %err, "cannot build arena game");
                return self.broadcast(None, 0.0, true, false);
            }
        };
        self.filter.nominal_human = match self.cfg.env {
            EnvKind::Driving => NominalHumanModel::Zero,
            _ => NominalHumanModel::ConstantVelocity {
                velocity: self.command.iter().copied().collect(),
            },
        };
        let start = Instant::now();
        let previous = self.carry.clone();
        let (mut u, mut record) = filter_step(&game, &self.x, &self.filter, previous.as_ref(), self.t);
        let ms_plan = start.elapsed().as_secs_f64() * 1e3;
        let mut deadline_missed = false;
        if self.cfg.enforce_deadline && start.elapsed() > self.cfg.tick() {
            if let Some(prev) = previous.filter(|p| !p.is_error()) {
                let age = self.t.saturating_sub(prev.t);
                if age < prev.plan.horizon() {
                    tracing::warn!(session = self.id, t = self.t, ms_plan, "plan missed the tick deadline, reusing previous plan");
                    u = game.robot_bounds().clamp(&prev.plan.robot[age]);
                    record = prev;
                    deadline_missed = true;
                }
            }
        }
        let error = record.is_error();
        let w = game.human_bounds().clamp(&self.command);
        match game.step(&self.x, &u, &w) {
            Ok(next) => self.x = next,
            Err(err) => {
                tracing::warn!(session = self.id, error = %err, "step failed, holding state");
            }
        }
        self.t += 1;
        let d = self.filter.layout.min_distance(&self.x);
        self.min_distance = self.min_distance.min(d);
        if d < self.cfg.collision_radius {
            self.collisions += 1;
        }
        let angle = self.robot_angle();
        self.angle.update(angle);
        self.states.push(self.x.clone());
        let plan = record.plan.clone();
        self.carry = Some(record);
        self.broadcast(Some((&game, &plan)), ms_plan, error, deadline_missed)
    }

    fn broadcast(&self, plan: Option<(&GameDefinition, &JointTrajectory)>, ms_plan: f64, error: bool, deadline_missed: bool) -> StateBroadcast {
        let layout = &self.filter.layout;
        let (robot_path, human_path) = match plan.map(|(g, p)| g.rollout(p)) {
            Some(Ok(states)) => (
                states.iter().skip(1).map(|s| layout.robot_position(s)).collect(),
                states.iter().skip(1).map(|s| layout.human_position(s, 0)).collect(),
            ),
            _ => (Vec::new(), Vec::new()),
        };
        StateBroadcast {
            t: self.t,
            robot: layout.robot_position(&self.x),
            human: layout.human_position(&self.x, 0),
            plan: robot_path,
            worst_case_human: human_path,
            lambda: self.lambda(),
            collisions: self.collisions,
            revolutions: self.revolutions(),
            ms_plan,
            error,
            deadline_missed,
        }
    }
}

/// Replays a command log from a fresh session and returns its states.
pub fn replay(cfg: &SessionConfig, log: &[LoggedCommand], ticks: usize) -> Result<Vec<State>> {
    let mut session = Session::new(0, cfg.clone())?;
    let mut pending = log.iter().peekable();
    for t in 0..ticks {
        while let Some(cmd) = pending.next_if(|c| c.tick <= t) {
            session.handle(cmd.message.clone())?;
        }
        session.tick();
    }
    Ok(session.states().to_vec())
}

/// Sessions by id.
#[derive(Default)]
pub struct Sessions {
    next_id: u64,
    sessions: BTreeMap<u64, Session>,
}

impl Sessions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, cfg: SessionConfig) -> Result<u64> {
        self.next_id += 1;
        let id = self.next_id;
        self.sessions.insert(id, Session::new(id, cfg)?);
        Ok(id)
    }

    pub fn close(&mut self, id: u64) -> Option<Session> {
        self.sessions.remove(&id)
    }

    pub fn get_mut(&mut self, id: u64) -> Result<&mut Session> {
        self.sessions.get_mut(&id).ok_or(Error::UnknownSession(id))
    }

    pub fn handle(&mut self, id: u64, message: ClientMessage) -> Result<Ack> {
        self.get_mut(id)?.handle(message)
    }

    pub fn tick(&mut self, id: u64) -> Result<StateBroadcast> {
        Ok(self.get_mut(id)?.tick())
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}
