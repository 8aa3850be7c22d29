use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the set where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible constraint: q = {q} exceeds max flux {max_flux} at s = {s}")]
    InfeasibleConstraint { s: f64, q: f64, max_flux: f64 },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("CFL violation: lambda * L = {product} exceeds {limit}")]
    Cfl { product: f64, limit: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config parse error at `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("run `{run}` failed: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_run(self, run: impl Into<String>) -> Self {
        Error::Run {
            run: run.into(),
            source: Box::new(self),
        }
    }
}
