//! Closed-loop benchmark harness: paired random trials, CSV output and
//! summary statistics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics, RankTieBreaker, Statistics};

use crate::env::{
    driving_grid, point_mass_grid, BoltzmannHuman, EnvConfig, EnvKind, EnvParams, HumanLayout, NominalHumanModel,
};
use crate::error::{Error, Result};
use crate::filter::{filter_step, plan_seed, FilterConfig, Method, PlanRecord};
use crate::game::{GameDefinition, State, Vector};
use crate::mh::serde_bound;

/// Column order of every results file.
pub const CSV_HEADER: &str =
    "trial,seed,method,lambda,k_humans,cost,ms_per_action,collisions,path_length,min_distance,status";

pub const COLLISION_RADIUS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub method: Method,
    pub n_trials: usize,
    /// Planner settings; its horizon, layout and method are overwritten from
    /// the environment and `method`.
    pub filter: FilterConfig,
    /// Closed-loop length, defaulting to the game horizon.
    pub steps: Option<usize>,
    /// Record wall-clock time. Off makes result files byte-reproducible.
    pub timing: bool,
    pub collision_radius: f64,
    /// Rationality of the simulated humans.
    #[serde(with = "serde_bound")]
    pub human_alpha: f64,
    /// Speed of the straight-to-goal prediction the robot is given. `None`
    /// uses `filter.nominal_human` as is.
    pub nominal_speed: Option<f64>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::new(EnvKind::PointMass),
            method: Method::Mclq,
            n_trials: 100,
            filter: FilterConfig::default(),
            steps: None,
            timing: true,
            collision_radius: COLLISION_RADIUS,
            human_alpha: crate::env::human::DEFAULT_ALPHA,
            nominal_speed: Some(0.5),
            output: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("TOML experiment config: {e}")))
    }

    /// Reads JSON or TOML, chosen by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::config("n_trials must be at least 1"));
        }
        if self.steps == Some(0) {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(self.collision_radius >= 0.0) {
            return Err(Error::config("collision_radius must be non-negative"));
        }
        if !(self.human_alpha >= 0.0) {
            return Err(Error::config("human_alpha must be non-negative"));
        }
        if let Some(s) = self.nominal_speed {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("nominal_speed must be finite and non-negative"));
            }
        }
        let game = self.env.game()?;
        if self.method == Method::Ne {
            let dg = crate::oracle::DiscretizedGame::three_level(game)?;
            let required = dg.robot_sequences().saturating_mul(dg.human_sequences());
            if required > dg.budget {
                return Err(Error::Budget {
                    required,
                    budget: dg.budget,
                });
            }
        }
        self.planner()?.validate()
    }

    /// Filter settings actually used for every trial.
    pub fn planner(&self) -> Result<FilterConfig> {
        let game = self.env.game()?;
        Ok(FilterConfig {
            horizon: game.horizon(),
            layout: self.env.layout()?,
            method: self.method,
            ..self.filter.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    /// Some replans failed and the robot held still for those steps.
    PlanErrors,
    /// The simulation itself failed; metrics are missing.
    Failed,
}

/// One row of a results file. Missing metrics are empty cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub lambda: f64,
    pub k_humans: usize,
    pub cost: Option<f64>,
    pub ms_per_action: Option<f64>,
    pub collisions: Option<usize>,
    pub path_length: Option<f64>,
    /// Closest robot-human approach; empty without humans.
    pub min_distance: Option<f64>,
    pub status: TrialStatus,
}

/// Initial state and the goals the simulated humans walk to.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub x0: State,
    pub human_goals: Vec<[f64; 2]>,
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    plan_seed(master, index)
}

/// Random start: the robot near the origin and each human on one side of
/// the robot's route with a goal on the other side.
pub fn random_scenario(params: &EnvParams, humans: usize, rng: &mut impl Rng) -> Scenario {
    match params {
        EnvParams::PointMass(p) => {
            let mut x0 = vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let mut goals = Vec::with_capacity(humans);
            let reach = p.goal[0].abs().max(1.0);
            for _ in 0..humans {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let x = rng.random_range(0.25 * reach..0.85 * reach);
                let y = side * rng.random_range(1.0..2.5);
                x0.extend([x, y]);
                goals.push([x + rng.random_range(-1.0..1.0), -side * rng.random_range(1.0..2.5)]);
            }
            Scenario {
                x0: DVector::from_vec(x0),
                human_goals: goals,
            }
        }
        EnvParams::Driving(p) => {
            let robot = [
                0.0,
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.1..0.1),
                rng.random_range(3.0..6.0),
            ];
            let hy = rng.random_range(-1.0..1.0);
            let human = [
                p.goal[0] + rng.random_range(2.0..6.0),
                hy,
                std::f64::consts::PI + rng.random_range(-0.1..0.1),
                rng.random_range(2.0..5.0),
            ];
            Scenario {
                x0: crate::env::driving_state(robot, human),
                human_goals: vec![[-p.goal[0], hy]],
            }
        }
    }
}

fn simulated_humans(params: &EnvParams, scenario: &Scenario, alpha: f64) -> Vec<BoltzmannHuman> {
    let grid = match params {
        EnvParams::PointMass(p) => point_mass_grid(p.human_action_bound),
        EnvParams::Driving(p) => driving_grid(p.human_accel_bound, p.human_steer_bound),
    };
    scenario
        .human_goals
        .iter()
        .map(|&goal| BoltzmannHuman {
            alpha,
            ..BoltzmannHuman::new(goal, grid.clone())
        })
        .collect()
}

struct Rollout {
    cost: f64,
    ms_per_action: f64,
    collisions: usize,
    path_length: f64,
    min_distance: f64,
    plan_errors: usize,
}

fn simulate(
    cfg: &ExperimentConfig,
    game: &GameDefinition,
    params: &EnvParams,
    planner: &FilterConfig,
    seed: u64,
) -> Result<Rollout> {
    let layout = &planner.layout;
    let mut scenario_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut human_rng = ChaCha8Rng::seed_from_u64(seed);
    human_rng.set_stream(1);
    let scenario = random_scenario(params, layout.human_count(), &mut scenario_rng);
    let humans = simulated_humans(params, &scenario, cfg.human_alpha);

    let mut planner = planner.clone();
    planner.sampler.seed = plan_seed(seed, usize::MAX);
    if let (Some(speed), HumanLayout::Planar { .. }) = (cfg.nominal_speed, layout) {
        planner.nominal_human = NominalHumanModel::StraightLine {
            goals: scenario.human_goals.clone(),
            speed,
        };
    }

    let steps = cfg.steps.unwrap_or(game.horizon());
    let mut x = scenario.x0.clone();
    let mut u_last = Vector::zeros(game.robot_dim());
    let mut carry: Option<PlanRecord> = None;
    let mut out = Rollout {
        cost: 0.0,
        ms_per_action: 0.0,
        collisions: 0,
        path_length: 0.0,
        min_distance: layout.min_distance(&x),
        plan_errors: 0,
    };
    let mut planning_secs = 0.0;
    for t in 0..steps {
        let start = Instant::now();
        let (u, record) = filter_step(game, &x, &planner, carry.as_ref(), t);
        planning_secs += start.elapsed().as_secs_f64();
        if record.is_error() {
            out.plan_errors += 1;
        }
        let mut w = Vector::zeros(game.human_dim());
        for (i, human) in humans.iter().enumerate() {
            let a = human.sample(layout, i, &x, &u_last, &mut human_rng);
            w.rows_mut(2 * i, 2).copy_from(&a);
        }
        let w = game.human_bounds().clamp(&w);
        out.cost += game.stage_cost(&x, &u, &w);
        let next = game.step(&x, &u, &w).map_err(|e| Error::Rollout {
            timestep: t,
            source: Box::new(e),
        })?;
        let (a, b) = (layout.robot_position(&x), layout.robot_position(&next));
        out.path_length += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let d = layout.min_distance(&next);
        if d < cfg.collision_radius {
            out.collisions += 1;
        }
        out.min_distance = out.min_distance.min(d);
        x = next;
        u_last = u;
        carry = Some(record);
    }
    out.cost += game.terminal_cost(&x);
    if !out.cost.is_finite() {
        return Err(Error::NonFinite {
            what: "closed-loop cost",
            timestep: steps,
            entry: 0,
        });
    }
    if cfg.timing {
        out.ms_per_action = planning_secs * 1e3 / steps as f64;
    }
    Ok(out)
}

fn run_trial(cfg: &ExperimentConfig, game: &GameDefinition, params: &EnvParams, planner: &FilterConfig, trial: usize) -> TrialRecord {
    let seed = trial_seed(cfg.seed, trial);
    let mut record = TrialRecord {
        trial,
        seed,
        method: cfg.method,
        lambda: planner.sampler.lambda,
        k_humans: planner.layout.human_count(),
        cost: None,
        ms_per_action: None,
        collisions: None,
        path_length: None,
        min_distance: None,
        status: TrialStatus::Failed,
    };
    match simulate(cfg, game, params, planner, seed) {
        Ok(r) => {
            record.cost = Some(r.cost);
            record.ms_per_action = Some(r.ms_per_action);
            record.collisions = Some(r.collisions);
            record.path_length = Some(r.path_length);
            record.min_distance = r.min_distance.is_finite().then_some(r.min_distance);
            record.status = if r.plan_errors == 0 {
                TrialStatus::Ok
            } else {
                TrialStatus::PlanErrors
            };
        }
        Err(err) => tracing::warn!(trial, error = %err, "trial failed"),
    }
    record
}

/// Worker count: `BENCH_THREADS` if set, otherwise every core.
pub fn bench_threads() -> usize {
    std::env::var("BENCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn trials_into<W: Write>(cfg: &ExperimentConfig, mut sink: Option<&mut csv::Writer<W>>) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let game = cfg.env.game()?;
    let params = cfg.env.resolve()?;
    let planner = cfg.planner()?;
    let threads = bench_threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let mut records = Vec::with_capacity(cfg.n_trials);
    let chunk = threads * 2;
    for first in (0..cfg.n_trials).step_by(chunk) {
        let last = (first + chunk).min(cfg.n_trials);
        let batch: Vec<TrialRecord> =
            pool.install(|| (first..last).into_par_iter().map(|i| run_trial(cfg, &game, &params, &planner, i)).collect());
        if let Some(w) = sink.as_deref_mut() {
            for r in &batch {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        records.extend(batch);
    }
    Ok(records)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Runs `n_trials` closed-loop trials in order of trial index, writing each
/// finished batch to `cfg.output` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    match &cfg.output {
        Some(path) => trials_into(cfg, Some(&mut csv_writer(path)?)),
        None => trials_into::<std::io::Sink>(cfg, None),
    }
}

/// Trials of one sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub k_humans: usize,
    pub records: Vec<TrialRecord>,
}

/// Runs every `(λ, k)` cell with the same trial seeds. `k ≠ 1` needs the
/// multi-human environment.
pub fn lambda_sweep(cfg: &ExperimentConfig, lambdas: &[f64], k_humans: &[usize]) -> Result<Vec<SweepCell>> {
    if lambdas.is_empty() || k_humans.is_empty() {
        return Err(Error::config("sweep needs at least one λ and one human count"));
    }
    if cfg.env.env != EnvKind::MultiHuman && k_humans.iter().any(|&k| k != 1) {
        return Err(Error::config("human counts other than 1 need the multi_human environment"));
    }
    let mut sink = cfg.output.as_deref().map(csv_writer).transpose()?;
    let mut cells = Vec::with_capacity(lambdas.len() * k_humans.len());
    for &k in k_humans {
        for &lambda in lambdas {
            let mut cell_cfg = cfg.clone();
            cell_cfg.env.k = k;
            cell_cfg.filter.sampler.lambda = lambda;
            let records = trials_into(&cell_cfg, sink.as_mut())?;
            cells.push(SweepCell {
                lambda,
                k_humans: k,
                records,
            });
        }
    }
    Ok(cells)
}

/// Reads a results file written by [`run_experiment`] or [`lambda_sweep`].
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::config(format!("unexpected results header {header:?}")));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation, `0` for a single value.
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        match values.len() {
            0 => None,
            1 => Some(Self {
                mean: values[0],
                std: 0.0,
                count: 1,
            }),
            n => Some(Self {
                mean: values.mean(),
                std: values.std_dev(),
                count: n,
            }),
        }
    }
}

pub const METRICS: [&str; 5] = ["cost", "ms_per_action", "collisions", "path_length", "min_distance"];

impl TrialRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "cost" => self.cost,
            "ms_per_action" => self.ms_per_action,
            "collisions" => self.collisions.map(|c| c as f64),
            "path_length" => self.path_length,
            "min_distance" => self.min_distance,
            _ => None,
        }
    }
}

/// Statistics of one (method, λ, k) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub method: Method,
    pub lambda: f64,
    pub k_humans: usize,
    pub trials: usize,
    pub failed: usize,
    pub metrics: Vec<(String, Option<MetricSummary>)>,
}

impl GroupSummary {
    pub fn metric(&self, name: &str) -> Option<MetricSummary> {
        self.metrics.iter().find(|(m, _)| m == name).and_then(|(_, s)| *s)
    }
}

/// Welch test between two methods in the same (λ, k) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Method,
    pub b: Method,
    pub lambda: f64,
    pub k_humans: usize,
    pub metric: String,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub comparisons: Vec<Comparison>,
}

fn values(records: &[&TrialRecord], metric: &str) -> Vec<f64> {
    records.iter().filter_map(|r| r.metric(metric)).collect()
}

/// Groups by (method, λ, k) in order of first appearance.
pub fn summarize(records: &[TrialRecord]) -> Summary {
    let mut keys: Vec<(Method, f64, usize)> = Vec::new();
    for r in records {
        let key = (r.method, r.lambda, r.k_humans);
        if !keys.iter().any(|k| same_key(k, &key)) {
            keys.push(key);
        }
    }
    let members = |key: &(Method, f64, usize)| -> Vec<&TrialRecord> {
        records
            .iter()
            .filter(|r| same_key(&(r.method, r.lambda, r.k_humans), key))
            .collect()
    };
    let groups = keys
        .iter()
        .map(|key| {
            let rs = members(key);
            GroupSummary {
                method: key.0,
                lambda: key.1,
                k_humans: key.2,
                trials: rs.len(),
                failed: rs.iter().filter(|r| r.status == TrialStatus::Failed).count(),
                metrics: METRICS
                    .iter()
                    .map(|m| (m.to_string(), MetricSummary::of(&values(&rs, m))))
                    .collect(),
            }
        })
        .collect();
    let mut comparisons = Vec::new();
    for (i, a) in keys.iter().enumerate() {
        for b in &keys[i + 1..] {
            if a.0 == b.0 || a.1.total_cmp(&b.1).is_ne() || a.2 != b.2 {
                continue;
            }
            let (ra, rb) = (members(a), members(b));
            for m in METRICS {
                comparisons.push(Comparison {
                    a: a.0,
                    b: b.0,
                    lambda: a.1,
                    k_humans: a.2,
                    metric: m.to_string(),
                    p_value: welch_p(&values(&ra, m), &values(&rb, m)),
                });
            }
        }
    }
    Summary { groups, comparisons }
}

fn same_key(a: &(Method, f64, usize), b: &(Method, f64, usize)) -> bool {
    a.0 == b.0 && a.1.total_cmp(&b.1).is_eq() && a.2 == b.2
}

fn variance(x: &[f64]) -> f64 {
    x.variance()
}

/// Two-sided Welch t-test p-value; `None` with fewer than two samples on
/// either side.
pub fn welch_p(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let diff = a.mean() - b.mean();
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Some(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Spearman rank correlation and its two-sided p-value (t approximation).
/// Constant input gives `(0, 1)`.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let rx: Vec<f64> = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry: Vec<f64> = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    let (mx, my) = (rx.iter().mean(), ry.iter().mean());
    let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Some((0.0, 1.0));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len() as f64;
    if rho.abs() == 1.0 {
        return Some((rho, 0.0));
    }
    let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).ok()?;
    Some((rho, (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)))
}

fn fmt_lambda(l: f64) -> String {
    if l.is_infinite() { "inf".into() } else { format!("{l}") }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<6} {:>7} {:>3} {:>6}  {:<14} {:>12} {:>12}", "method", "lambda", "k", "trials", "metric", "mean", "std")?;
        for g in &self.groups {
            for (name, stat) in &g.metrics {
                let Some(s) = stat else { continue };
                writeln!(
                    f,
                    "{:<6} {:>7} {:>3} {:>6}  {:<14} {:>12.4} {:>12.4}",
                    g.method.as_str(),
                    fmt_lambda(g.lambda),
                    g.k_humans,
                    g.trials,
                    name,
                    s.mean,
                    s.std
                )?;
            }
        }
        if !self.comparisons.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<12} {:>7} {:>3}  {:<14} {:>10}", "welch", "lambda", "k", "metric", "p")?;
            for c in &self.comparisons {
                let p = c.p_value.map_or("-".to_string(), |p| format!("{p:.4}"));
                writeln!(
                    f,
                    "{:<12} {:>7} {:>3}  {:<14} {:>10}",
                    format!("{}-{}", c.a, c.b),
                    fmt_lambda(c.lambda),
                    c.k_humans,
                    c.metric,
                    p
                )?;
            }
        }
        Ok(())
    }
}
