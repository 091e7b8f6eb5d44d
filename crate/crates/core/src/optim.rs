//! Vanilla and momentum SGD with pruning masks.
//!
//! Pruned coordinates have their gradient zeroed before the update and are
//! written back as exact zeros afterwards, together with their velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PruneMask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Learning rate η.
    pub eta: f64,
    /// Momentum β; zero selects plain SGD.
    #[serde(default)]
    pub beta: f64,
}

impl OptimizerConfig {
    pub fn sgd(eta: f64) -> Self {
        OptimizerConfig { eta, beta: 0.0 }
    }

    pub fn momentum(eta: f64, beta: f64) -> Self {
        OptimizerConfig { eta, beta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub velocity: Vec<f64>,
}

impl MomentumState {
    pub fn zeros(n: usize) -> Self {
        MomentumState {
            velocity: vec![0.0; n],
        }
    }
}

fn check(params: &[f64], grad: &[f64], mask: &PruneMask) -> Result<()> {
    if params.len() != grad.len() || params.len() != mask.len() {
        return Err(Error::Shape(format!(
            "params {}, grad {}, mask {}",
            params.len(),
            grad.len(),
            mask.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(())
}

/// `θ ← θ − η g` on kept coordinates; pruned coordinates stay exactly zero.
pub fn sgd_step(params: &mut [f64], grad: &[f64], mask: &PruneMask, cfg: &OptimizerConfig) -> Result<()> {
    check(params, grad, mask)?;
    for (k, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
        if mask.is_kept(k) {
            *p -= cfg.eta * g;
        } else {
            *p = 0.0;
        }
    }
    Ok(())
}

/// `v ← β v + g`, `θ ← θ − η v`, with masked coordinates of both zeroed.
pub fn momentum_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut MomentumState,
    mask: &PruneMask,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check(params, grad, mask)?;
    if state.velocity.len() != params.len() {
        return Err(Error::Shape(format!(
            "velocity of length {} for {} parameters",
            state.velocity.len(),
            params.len()
        )));
    }
    for (k, ((p, &g), v)) in params.iter_mut().zip(grad).zip(&mut state.velocity).enumerate() {
        if mask.is_kept(k) {
            *v = cfg.beta * *v + g;
            *p -= cfg.eta * *v;
        } else {
            *v = 0.0;
            *p = 0.0;
        }
    }
    Ok(())
}

/// Stateful wrapper choosing the stepper from the configured momentum.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    pub state: MomentumState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Optimizer {
            cfg,
            state: MomentumState::zeros(n),
        })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], mask: &PruneMask) -> Result<()> {
        if self.cfg.beta == 0.0 {
            sgd_step(params, grad, mask, &self.cfg)
        } else {
            momentum_step(params, grad, &mut self.state, mask, &self.cfg)
        }
    }
}
