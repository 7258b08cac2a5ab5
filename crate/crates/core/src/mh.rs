//! Nested Metropolis-Hastings search over open-loop action sequences.
//!
//! The inner chain perturbs the human sequence and moves uphill in cost, the
//! outer chain perturbs the robot sequence and moves downhill. Both share one
//! running cost `J₀`. Proposals that leave the action bounds or the safety
//! margin around the nominal human sequence are rejected before the
//! acceptance test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::{ActionTrajectory, GameDefinition, JointTrajectory};

/// Inverse temperature of both acceptance tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beta {
    Finite(f64),
    /// The `β → ∞` limit: only non-worsening proposals are accepted.
    Greedy,
}

impl Beta {
    pub fn is_greedy(self) -> bool {
        matches!(self, Beta::Greedy)
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Greedy => s.serialize_str("greedy"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(b) => Ok(Beta::Finite(b)),
            Raw::Text(t) if t.eq_ignore_ascii_case("greedy") || t.eq_ignore_ascii_case("inf") => Ok(Beta::Greedy),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown beta {t:?}"))),
        }
    }
}

/// Serde for a bound that may be `+∞`: finite values are numbers, infinity is
/// written as `"inf"` and read back from `"inf"`, `"infinity"` or `null`.
pub mod serde_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
            Null(()),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(v),
            Raw::Null(()) => Ok(f64::INFINITY),
            Raw::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub beta: Beta,
    /// `M`, robot proposals.
    pub outer_iters: usize,
    /// `N`, human proposals per robot proposal.
    pub inner_iters: usize,
    /// Squared-norm margin around the nominal human sequence; `∞` disables it.
    #[serde(with = "serde_bound")]
    pub lambda: f64,
    /// Per-dimension standard deviations; a single entry applies to every
    /// dimension.
    pub perturb_scale_u: Vec<f64>,
    pub perturb_scale_w: Vec<f64>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            beta: Beta::Finite(10.0),
            outer_iters: 100,
            inner_iters: 20,
            lambda: f64::INFINITY,
            perturb_scale_u: vec![0.1],
            perturb_scale_w: vec![0.1],
            seed: 0,
        }
    }
}

fn broadcast(scale: &[f64], dim: usize, what: &str) -> Result<Vec<f64>> {
    match scale.len() {
        1 => Ok(vec![scale[0]; dim]),
        n if n == dim => Ok(scale.to_vec()),
        n => Err(Error::config(format!("{what} has {n} entries for {dim} action dimensions"))),
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::config("outer_iters and inner_iters must be at least 1"));
        }
        if let Beta::Finite(b) = self.beta {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::config(format!("beta must be finite and non-negative, got {b}")));
            }
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        let scales = self.perturb_scale_u.iter().chain(&self.perturb_scale_w);
        if self.perturb_scale_u.is_empty()
            || self.perturb_scale_w.is_empty()
            || scales.clone().any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::config("perturbation scales must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Adds zero-mean Gaussian noise with per-dimension standard deviation
/// `scale` to a uniformly drawn contiguous window of `delta`.
pub fn perturb(delta: &ActionTrajectory, scale: &[f64], rng: &mut impl Rng) -> ActionTrajectory {
    let mut candidate = delta.clone();
    let horizon = delta.len();
    if horizon == 0 {
        return candidate;
    }
    let len = rng.random_range(1..=horizon);
    let start = rng.random_range(0..=horizon - len);
    for action in candidate.iter_mut().skip(start).take(len) {
        for (a, s) in action.iter_mut().zip(scale) {
            let z: f64 = rng.sample(StandardNormal);
            *a += s * z;
        }
    }
    candidate
}

/// Inner (human, maximizing) acceptance: `exp(β(J_new − J_old)) > η`.
pub fn inner_accept(j_new: f64, j_old: f64, beta: Beta, eta: f64) -> bool {
    match beta {
        Beta::Greedy => j_new >= j_old,
        Beta::Finite(b) => (b * (j_new - j_old)).exp() > eta,
    }
}

/// Outer (robot, minimizing) acceptance: `exp(β(J_old − J_new)) > η`.
pub fn outer_accept(j_old: f64, j_new: f64, beta: Beta, eta: f64) -> bool {
    inner_accept(j_old, j_new, beta, eta)
}

/// `‖nominal_w − candidate_w‖² ≤ λ`, always true for `λ = ∞`.
pub fn within_margin(nominal_w: &ActionTrajectory, candidate_w: &ActionTrajectory, lambda: f64) -> bool {
    lambda.is_infinite() || nominal_w.squared_distance(candidate_w) <= lambda
}

/// Pulls `w` back onto the margin ball around `nominal_w` if it lies outside.
fn project_to_margin(nominal_w: &ActionTrajectory, w: &ActionTrajectory, lambda: f64) -> ActionTrajectory {
    if within_margin(nominal_w, w, lambda) {
        return w.clone();
    }
    let offset = w.sub(nominal_w);
    let shrink = (lambda / nominal_w.squared_distance(w)).sqrt();
    let scaled = ActionTrajectory::new(offset.iter().map(|a| a * shrink).collect());
    let projected = nominal_w.add(&scaled);
    if within_margin(nominal_w, &projected, lambda) {
        projected
    } else {
        // rounding can leave the rescaled point a hair outside
        nominal_w.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub refined: JointTrajectory,
    pub final_cost: f64,
    /// Cost of the seed after clamping and margin projection.
    pub seed_cost: f64,
    /// Running cost `J₀` after each outer iteration.
    pub cost_trace: Vec<f64>,
    pub inner_accept_rate: f64,
    pub outer_accept_rate: f64,
    pub margin_rejections: usize,
    pub bound_rejections: usize,
}

impl RefineResult {
    pub fn robot(&self) -> &ActionTrajectory {
        &self.refined.robot
    }

    pub fn worst_case_human(&self) -> &ActionTrajectory {
        &self.refined.human
    }
}

/// Runs the nested search from `seed`. The seed's robot sequence is clamped
/// to bounds and its human sequence projected into the `λ` margin before the
/// chain starts.
pub fn refine(
    game: &GameDefinition,
    seed: &JointTrajectory,
    nominal_w: &ActionTrajectory,
    cfg: &SamplerConfig,
) -> Result<RefineResult> {
    cfg.validate()?;
    let horizon = game.horizon();
    if seed.horizon() != horizon || nominal_w.len() != horizon {
        return Err(Error::Dimension {
            what: "refine horizon",
            expected: horizon,
            got: if seed.horizon() != horizon { seed.horizon() } else { nominal_w.len() },
        });
    }
    if nominal_w.dim() != game.human_dim() {
        return Err(Error::Dimension {
            what: "nominal human action",
            expected: game.human_dim(),
            got: nominal_w.dim(),
        });
    }
    let scale_u = broadcast(&cfg.perturb_scale_u, game.robot_dim(), "perturb_scale_u")?;
    let scale_w = broadcast(&cfg.perturb_scale_w, game.human_dim(), "perturb_scale_w")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let base_u = game.robot_bounds().clamp_trajectory(&seed.robot);
    let base_w = game
        .human_bounds()
        .clamp_trajectory(&project_to_margin(nominal_w, &seed.human, cfg.lambda));
    let x0 = &seed.x0;
    let cost = |u: &ActionTrajectory, w: &ActionTrajectory, outer: usize, inner: usize| {
        game.cost_of(x0, u, w).map_err(|e| Error::Sampler {
            outer,
            inner,
            source: Box::new(e),
        })
    };

    let mut delta_u = ActionTrajectory::zeros(horizon, game.robot_dim());
    let mut delta_w = ActionTrajectory::zeros(horizon, game.human_dim());
    let mut u = base_u.clone();
    let mut w = base_w.clone();
    let seed_cost = cost(&u, &w, 0, 0)?;
    let mut j0 = seed_cost;
    let mut cost_trace = Vec::with_capacity(cfg.outer_iters);
    let (mut inner_accepted, mut outer_accepted) = (0usize, 0usize);
    let (mut margin_rejections, mut bound_rejections) = (0usize, 0usize);

    for m in 0..cfg.outer_iters {
        for n in 0..cfg.inner_iters {
            let delta_n = perturb(&delta_w, &scale_w, &mut rng);
            let w_new = base_w.add(&delta_n);
            if !game.human_bounds().contains_all(&w_new) {
                bound_rejections += 1;
                continue;
            }
            if !within_margin(nominal_w, &w_new, cfg.lambda) {
                margin_rejections += 1;
                continue;
            }
            let j_w = cost(&u, &w_new, m, n)?;
            let eta: f64 = rng.random();
            if inner_accept(j_w, j0, cfg.beta, eta) {
                j0 = j_w;
                delta_w = delta_n;
                w = w_new;
                inner_accepted += 1;
                debug_assert!(within_margin(nominal_w, &w, cfg.lambda));
            }
        }
        let delta_m = perturb(&delta_u, &scale_u, &mut rng);
        let u_new = base_u.add(&delta_m);
        if game.robot_bounds().contains_all(&u_new) {
            let j_u = cost(&u_new, &w, m, cfg.inner_iters)?;
            let eta: f64 = rng.random();
            if outer_accept(j0, j_u, cfg.beta, eta) {
                j0 = j_u;
                delta_u = delta_m;
                u = u_new;
                outer_accepted += 1;
            }
        } else {
            bound_rejections += 1;
        }
        cost_trace.push(j0);
    }

    let refined = JointTrajectory::new(x0.clone(), u, w)?;
    let final_cost = game.cumulative_cost(&refined)?;
    Ok(RefineResult {
        refined,
        final_cost,
        seed_cost,
        cost_trace,
        inner_accept_rate: inner_accepted as f64 / (cfg.outer_iters * cfg.inner_iters) as f64,
        outer_accept_rate: outer_accepted as f64 / cfg.outer_iters as f64,
        margin_rejections,
        bound_rejections,
    })
}
