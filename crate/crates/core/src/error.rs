use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("tape is stale: {0}")]
    StaleTape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown environment `{name}`; valid names: {valid}")]
    UnknownEnv { name: String, valid: String },

    #[error("episode already finished; call reset before stepping")]
    EpisodeFinished,

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config key `{key}`; valid keys: {valid}")]
    UnknownConfigKey { key: String, valid: String },

    #[error("replay buffer holds {have} transitions, {need} requested")]
    BufferUnderflow { have: usize, need: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("entropy budget {budget} outside feasible interval [{low}, {high}]")]
    Infeasible { budget: f64, low: f64, high: f64 },

    #[error("trajectory entropy not monotone in alpha: H({a_lo:e}) = {h_lo} > H({a_hi:e}) = {h_hi}")]
    NotMonotone {
        a_lo: f64,
        h_lo: f64,
        a_hi: f64,
        h_hi: f64,
    },

    #[error("identity violated: {0}")]
    Inconsistent(String),

    #[error("empty evaluation window [{from}, {to}]")]
    EmptyWindow { from: f64, to: f64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownConfigKey { .. } | Error::UnknownEnv { .. } | Error::InvalidArgument(_)
        )
    }
}
