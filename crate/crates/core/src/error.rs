use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid feeder: {0}")]
    Validation(String),

    #[error("invalid profiles: {0}")]
    Profile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("degenerate impedance on segment {0}")]
    DegenerateSegment(String),

    #[error("sensitivity failure at node {node}: {message}")]
    Sensitivity { node: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("simulation failed at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line tool: 1 for I/O, 2 for
    /// malformed or invalid input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Profile(_)
            | Error::Config(_)
            | Error::DegenerateSegment(_) => 2,
            Error::NonConvergence { .. } | Error::Sensitivity { .. } | Error::Numerical(_) => 3,
            Error::Step { source, .. } => source.exit_code(),
        }
    }
}
