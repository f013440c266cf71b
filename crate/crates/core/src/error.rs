use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the solver kit.
///
/// The variants map onto the CLI exit-code contract: numerical failures
/// exit with 1, configuration and usage problems with 2.
#[derive(Debug, Error)]
pub enum IamError {
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("infeasible step at period {period}: {detail}")]
    Infeasible { period: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration error at {location}: {detail}")]
    Calibration { location: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver did not converge after {iterations} iterations (projected gradient {pg_norm:.3e}, objective {objective:.6e})")]
    NotConverged {
        iterations: usize,
        pg_norm: f64,
        objective: f64,
        best: Vec<f64>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IamError {
    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        IamError::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        IamError::Config(detail.into())
    }

    pub fn numerical(detail: impl Into<String>) -> Self {
        IamError::Numerical(detail.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IamError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error (1 numerical, 2 usage/config).
    pub fn exit_code(&self) -> i32 {
        match self {
            IamError::Config(_) | IamError::Calibration { .. } | IamError::Io { .. } => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            IamError::Domain { .. } => "domain",
            IamError::Infeasible { .. } => "infeasible",
            IamError::Config(_) => "config",
            IamError::Calibration { .. } => "calibration",
            IamError::Data(_) => "data",
            IamError::Numerical(_) => "numerical",
            IamError::NotConverged { .. } => "not_converged",
            IamError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, IamError>;
