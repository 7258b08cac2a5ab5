//! Safety filtering for robots that share space with people, posed as a
//! zero-sum dynamic game between the robot and a worst-case human.
//!
//! Planning runs in two stages. An LQ game solved around a nominal
//! trajectory gives a feedback saddle point, and a nested Metropolis-Hastings
//! search then refines it on the original nonlinear game.

pub mod error;
pub mod game;
pub mod linalg;
pub mod lq;
pub mod env;
pub mod mh;
pub mod oracle;
pub mod filter;
pub mod experiment;
pub mod session;

pub use error::{Error, Result};
pub use game::{ActionTrajectory, Bounds, GameDefinition, JointTrajectory, State, Vector};
pub use lq::{linearize_quadraticize, lq_seed, solve_coupled_riccati, GainSchedule, LqApproximation, LqOptions};
pub use mh::{refine, Beta, RefineResult, SamplerConfig};
pub use filter::{filter_step, plan, FilterConfig, Method, PlanRecord};
pub use oracle::{brute_force_ne, ilq_solve, ilq_solve_from, DiscretizedGame, IlqOptions, IlqResult, NeSolution};
pub use experiment::{lambda_sweep, run_experiment, summarize, ExperimentConfig, Summary, TrialRecord};
pub use session::{ClientMessage, ServerMessage, Session, SessionConfig, StateBroadcast};
