use std::path::PathBuf;

use thiserror::Error;

use crate::lasso::GammaFit;
use crate::prune::RunReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("mask: {0}")]
    Mask(String),

    #[error("lasso did not converge after {epochs} epochs (last max change {max_change:e})")]
    NotConverged {
        epochs: usize,
        max_change: f64,
        last: Box<GammaFit>,
    },

    #[error("power iteration for eigenvalue {index} did not converge within {iterations} iterations")]
    EigenNotConverged { index: usize, iterations: usize },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("run aborted in iteration {iteration}: {source}")]
    RunAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        partial: Box<RunReport>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
