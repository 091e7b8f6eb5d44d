//! Granger-causal analysis of gradient descent.
//!
//! Training records every step's parameters and loss; the loss changes are
//! regressed on squared parameter changes layer by layer with an L1 penalty,
//! and parameters whose coefficients come out exactly zero are pruned. The
//! crate also ships the magnitude-pruning baseline, mask comparison,
//! hyperparameter sweeps and Hessian-based flatness measurements.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flatness;
pub mod lasso;
pub mod mask;
pub mod model;
pub mod optim;
pub mod prune;
pub mod recorder;
pub mod train;

pub use error::{Error, Result};
