//! Concrete games, simulated humans and environment configuration files.

pub mod driving;
pub mod human;
pub mod point_mass;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameDefinition, State, Vector};

pub use driving::{driving_game, driving_state, DrivingParams};
pub use human::{
    boltzmann_probabilities, driving_grid, nominal_trajectory, point_mass_grid, BoltzmannHuman, NominalHumanModel,
};
pub use point_mass::{multi_human_game, point_mass_game, point_mass_state, PointMassParams};

/// Where agents live inside the joint state, and how a simulated human
/// imagines one step of its own motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HumanLayout {
    /// `[p_R; p_H1; …]` with two-dimensional velocity actions.
    Planar { count: usize, disturbance_gain: f64 },
    /// `[robot (px, py, θ, v); human (px, py, θ, v)]`.
    Bicycle { dt: f64, wheelbase: f64 },
}

impl HumanLayout {
    pub fn human_count(&self) -> usize {
        match self {
            HumanLayout::Planar { count, .. } => *count,
            HumanLayout::Bicycle { .. } => 1,
        }
    }

    pub fn robot_position(&self, x: &State) -> [f64; 2] {
        [x[0], x[1]]
    }

    pub fn human_position(&self, x: &State, index: usize) -> [f64; 2] {
        match self {
            HumanLayout::Planar { .. } => [x[2 + 2 * index], x[3 + 2 * index]],
            HumanLayout::Bicycle { .. } => [x[4], x[5]],
        }
    }

    pub fn human_positions(&self, x: &State) -> Vec<[f64; 2]> {
        (0..self.human_count()).map(|i| self.human_position(x, i)).collect()
    }

    /// Smallest robot-human distance, `+∞` without humans.
    pub fn min_distance(&self, x: &State) -> f64 {
        let r = self.robot_position(x);
        self.human_positions(x)
            .iter()
            .map(|h| ((h[0] - r[0]).powi(2) + (h[1] - r[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Moves the robot by `u` and human `index` by `action`, ignoring every
    /// other agent.
    pub(crate) fn advance_pair(&self, x: &mut State, index: usize, u: &Vector, action: &[f64]) {
        match self {
            HumanLayout::Planar { disturbance_gain, .. } => {
                x[0] += u[0] + disturbance_gain * action[0];
                x[1] += u[1] + disturbance_gain * action[1];
                x[2 + 2 * index] += action[0];
                x[3 + 2 * index] += action[1];
            }
            HumanLayout::Bicycle { dt, wheelbase } => {
                for (offset, a, s) in [(0, u[0], u[1]), (4, action[0], action[1])] {
                    let (theta, v) = (x[offset + 2], x[offset + 3]);
                    x[offset] += v * theta.cos() * dt;
                    x[offset + 1] += v * theta.sin() * dt;
                    x[offset + 2] += v / wheelbase * s.tan() * dt;
                    x[offset + 3] += a * dt;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointMass,
    Driving,
    MultiHuman,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point_mass" => Ok(EnvKind::PointMass),
            "driving" => Ok(EnvKind::Driving),
            "multi_human" => Ok(EnvKind::MultiHuman),
            other => Err(Error::config(format!("unknown env {other:?}"))),
        }
    }
}

/// Environment file contents:
/// `{"env": "multi_human", "T": 15, "k": 3, "seed": 7, "params": {...}}`.
/// `params` overrides fields of the matching parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub env: EnvKind,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

fn one() -> usize {
    1
}

/// Resolved parameters of an [`EnvConfig`].
#[derive(Clone, Debug, PartialEq)]
pub enum EnvParams {
    PointMass(PointMassParams),
    Driving(DrivingParams),
}

impl EnvConfig {
    pub fn new(env: EnvKind) -> Self {
        Self {
            env,
            horizon: None,
            k: 1,
            seed: 0,
            params: serde_json::Value::Null,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("TOML environment config: {e}")))
    }

    /// Reads JSON or TOML, chosen by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn humans(&self) -> usize {
        match self.env {
            EnvKind::PointMass => 1,
            EnvKind::Driving => 1,
            EnvKind::MultiHuman => self.k,
        }
    }

    pub fn resolve(&self) -> Result<EnvParams> {
        let overrides = if self.params.is_null() {
            serde_json::json!({})
        } else {
            self.params.clone()
        };
        let mut params = match self.env {
            EnvKind::PointMass => EnvParams::PointMass(merge(PointMassParams::default(), &overrides)?),
            EnvKind::MultiHuman => EnvParams::PointMass(merge(PointMassParams::crowd(), &overrides)?),
            EnvKind::Driving => EnvParams::Driving(merge(DrivingParams::default(), &overrides)?),
        };
        if let Some(t) = self.horizon {
            match &mut params {
                EnvParams::PointMass(p) => p.horizon = t,
                EnvParams::Driving(p) => p.horizon = t,
            }
        }
        Ok(params)
    }

    pub fn game(&self) -> Result<GameDefinition> {
        match self.resolve()? {
            EnvParams::PointMass(p) => multi_human_game(self.humans(), &p),
            EnvParams::Driving(p) => driving_game(&p),
        }
    }

    pub fn layout(&self) -> Result<HumanLayout> {
        Ok(match self.resolve()? {
            EnvParams::PointMass(p) => HumanLayout::Planar {
                count: self.humans(),
                disturbance_gain: p.disturbance_gain,
            },
            EnvParams::Driving(p) => HumanLayout::Bicycle {
                dt: p.dt,
                wheelbase: p.wheelbase,
            },
        })
    }
}

fn merge<T: Serialize + serde::de::DeserializeOwned>(base: T, overrides: &serde_json::Value) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    match (value.as_object_mut(), overrides.as_object()) {
        (Some(target), Some(src)) => {
            for (k, v) in src {
                if !target.contains_key(k) {
                    return Err(Error::config(format!("unknown environment parameter {k:?}")));
                }
                target.insert(k.clone(), v.clone());
            }
        }
        _ => return Err(Error::config("environment params must be an object")),
    }
    Ok(serde_json::from_value(value)?)
}
