use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("infeasible set: {0}")]
    Infeasible(String),

    #[error("degenerate prior: no mass on any expert with finite loss")]
    DegeneratePrior,

    /// The ridge estimate lies outside the decision ball, so the closed form
    /// no longer solves the constrained problem.
    #[error("ridge constraint active: |theta_hat| = {norm} > C = {radius}")]
    ConstraintActive { norm: f64, radius: f64 },

    #[error("solver diverged at step {step}")]
    Divergence { step: usize, iterate: DVector<f64> },

    #[error("seed {seed}, task {task}: {source}")]
    InRun {
        seed: u64,
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
