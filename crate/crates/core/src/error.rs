use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {what} at timestep {timestep} (entry {entry})")]
    NonFinite {
        what: &'static str,
        timestep: usize,
        entry: usize,
    },

    #[error("singular {what} at timestep {timestep}")]
    Singular { what: &'static str, timestep: usize },

    #[error("enumeration needs {required} cost evaluations, budget is {budget}")]
    Budget { required: u128, budget: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cost evaluation failed at outer iteration {outer}, inner iteration {inner}: {source}")]
    Sampler {
        outer: usize,
        inner: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rollout failed at timestep {timestep}: {source}")]
    Rollout {
        timestep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown session {0}")]
    UnknownSession(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
