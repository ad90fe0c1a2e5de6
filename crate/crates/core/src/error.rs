use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no instances")]
    NoInstances,

    #[error("empty class anchor: latent class {0} has no labeled instance")]
    EmptyClassAnchor(usize),

    #[error("infeasible assignment: mass {mass:e} on label {label} outside the feasible set")]
    InfeasibleAssignment { label: usize, mass: f64 },

    #[error("step not concave: proximal weight must be positive, got {0}")]
    StepNotConcave(f64),

    #[error(
        "IPFP did not converge after {sweeps} sweeps (row residual {row_residual:e}, \
         column residual {col_residual:e})"
    )]
    IpfpNoConvergence {
        sweeps: usize,
        row_residual: f64,
        col_residual: f64,
    },

    #[error("transportation LP failed: {0}")]
    Transport(String),

    #[error(
        "no descent direction at outer iteration {iteration}: line search exhausted \
         (t = {t:e}, g = {value}, gap = {gap:e})"
    )]
    NoDescent {
        iteration: usize,
        t: f64,
        value: f64,
        gap: f64,
    },

    #[error("M-step diverged: gradient norm grew from {initial:e} to {current:e}")]
    MStepDiverged { initial: f64, current: f64 },

    #[error("MIL constraints unsatisfiable at this lambda (max violation {0:e})")]
    MilInfeasible(f64),

    #[error("degenerate spectral embedding: all rows are zero")]
    DegenerateEmbedding,

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
