//! Per-layer L1-regularized regression of loss deltas on squared parameter
//! deltas, its optimality certificate, and the prune mask read off the zero
//! set of the coefficients.

mod cd;
mod streaming;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cd::fit_cd;
pub use streaming::fit_streaming;

use crate::error::{Error, Result};
use crate::mask::{PruneMask, PruneMethod, Provenance};
use crate::recorder::{DeltaDataset, DeltaMode, LayerBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    CoordinateDescent,
    Streaming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// L1 coefficient α.
    #[serde(rename = "l1_coeff")]
    pub alpha: f64,
    pub solver: Solver,
    pub max_epochs: usize,
    pub tol: f64,
    /// Penalize `α‖x_k‖·|γ_k|` instead of `α|γ_k|`, which makes α
    /// independent of feature scale. Off by default.
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            alpha: 1e-14,
            solver: Solver::CoordinateDescent,
            max_epochs: 100_000,
            tol: 1e-10,
            standardize: false,
        }
    }
}

impl LassoConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        LassoConfig {
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("l1_coeff must be >= 0, got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("lasso tol must be > 0, got {}", self.tol)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("lasso max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted coefficients for one layer block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub layer: String,
    pub params: Vec<usize>,
    pub features_per_param: usize,
    /// One coefficient per design column; zeros are exact.
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub objective: f64,
    pub epochs: usize,
    pub converged: bool,
    pub kkt_max: f64,
}

impl GammaFit {
    fn finish(
        block: &LayerBlock,
        gamma: Vec<f64>,
        cfg: &LassoConfig,
        weights: &[f64],
        epochs: usize,
        converged: bool,
    ) -> Self {
        let kkt = kkt_weighted(block, &gamma, cfg.alpha, weights);
        GammaFit {
            layer: block.layer.clone(),
            params: block.params.clone(),
            features_per_param: block.features_per_param,
            objective: objective_value(block, &gamma, cfg.alpha, weights),
            kkt_max: kkt.iter().fold(0.0, |m: f64, v| m.max(*v)),
            gamma,
            alpha: cfg.alpha,
            epochs,
            converged,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.gamma.iter().map(|g| g.abs()).sum()
    }

    pub fn nonzeros(&self) -> usize {
        self.gamma.iter().filter(|&&g| g != 0.0).count()
    }

    /// Coefficients of the `i`-th parameter in this block.
    pub fn coefficients(&self, i: usize) -> &[f64] {
        let f = self.features_per_param;
        &self.gamma[i * f..(i + 1) * f]
    }
}

/// Fits for every layer of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredFit {
    pub mode: DeltaMode,
    pub blocks: Vec<GammaFit>,
}

impl LayeredFit {
    pub fn total_epochs(&self) -> usize {
        self.blocks.iter().map(|b| b.epochs).sum()
    }

    pub fn max_kkt(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.kkt_max))
    }

    pub fn objective(&self) -> f64 {
        self.blocks.iter().map(|b| b.objective).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.blocks.iter().map(GammaFit::l1_norm).sum()
    }

    /// Writes `layer,param,feature,gamma` rows for auditing.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "param", "feature", "gamma"])?;
        for b in &self.blocks {
            for (j, g) in b.gamma.iter().enumerate() {
                let param = b.params[j / b.features_per_param];
                let feature = j % b.features_per_param;
                out.write_record([
                    b.layer.clone(),
                    param.to_string(),
                    feature.to_string(),
                    format!("{g:e}"),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn penalty_weights(block: &LayerBlock, standardize: bool) -> Vec<f64> {
    (0..block.cols())
        .map(|j| {
            if standardize {
                block.column(j).iter().map(|v| v * v).sum::<f64>().sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

pub(crate) fn objective_value(block: &LayerBlock, gamma: &[f64], alpha: f64, weights: &[f64]) -> f64 {
    let r = residual(block, gamma);
    let fit: f64 = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let pen: f64 = gamma.iter().zip(weights).map(|(g, w)| g.abs() * w).sum();
    fit + alpha * pen
}

fn residual(block: &LayerBlock, gamma: &[f64]) -> Vec<f64> {
    let mut r = block.target.clone();
    for (j, &g) in gamma.iter().enumerate() {
        if g != 0.0 {
            for (rv, &xv) in r.iter_mut().zip(block.column(j)) {
                *rv -= g * xv;
            }
        }
    }
    r
}

/// Objective `½‖y − Xγ‖² + α‖γ‖₁` of an arbitrary coefficient vector.
pub fn lasso_objective(block: &LayerBlock, gamma: &[f64], alpha: f64) -> f64 {
    objective_value(block, gamma, alpha, &vec![1.0; block.cols()])
}

/// Smallest α for which `γ = 0` is optimal: `max_k |x_kᵀ y|`.
pub fn null_alpha(block: &LayerBlock) -> f64 {
    (0..block.cols())
        .map(|j| {
            block
                .column(j)
                .iter()
                .zip(&block.target)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

fn kkt_weighted(block: &LayerBlock, gamma: &[f64], alpha: f64, weights: &[f64]) -> Vec<f64> {
    let r = residual(block, gamma);
    (0..block.cols())
        .map(|j| {
            let c: f64 = block.column(j).iter().zip(&r).map(|(x, rv)| x * rv).sum();
            let a = alpha * weights[j];
            let g = gamma[j];
            if g == 0.0 {
                (c.abs() - a).max(0.0)
            } else {
                (c - a * g.signum()).abs()
            }
        })
        .collect()
}

/// Per-coefficient KKT violation of `γ` for `½‖y − Xγ‖² + α‖γ‖₁`, with
/// `c_k = x_kᵀ(y − Xγ)`: `max(0, |c_k| − α)` at zeros and
/// `|c_k − α·sign(γ_k)|` elsewhere.
pub fn kkt_residual(block: &LayerBlock, gamma: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if gamma.len() != block.cols() {
        return Err(Error::Shape(format!(
            "{} coefficients for {} columns",
            gamma.len(),
            block.cols()
        )));
    }
    Ok(kkt_weighted(block, gamma, alpha, &vec![1.0; block.cols()]))
}

pub fn fit_block(block: &LayerBlock, cfg: &LassoConfig) -> Result<GammaFit> {
    match cfg.solver {
        Solver::CoordinateDescent => fit_cd(block, cfg),
        Solver::Streaming => fit_streaming(block, cfg),
    }
}

/// Fits every layer block independently (in parallel when a pool is available).
pub fn fit_dataset(ds: &DeltaDataset, cfg: &LassoConfig) -> Result<LayeredFit> {
    let blocks = ds
        .blocks
        .par_iter()
        .map(|b| fit_block(b, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(LayeredFit { mode: ds.mode, blocks })
}

/// Prunes every kept prunable parameter whose coefficients are all exactly
/// zero, on top of whatever `prior` already prunes.
pub fn extract_mask(fit: &LayeredFit, prior: &PruneMask, iteration: u32) -> Result<PruneMask> {
    let fpp = fit.mode.features_per_param();
    let mut covered = vec![false; prior.len()];
    let mut mask = prior.clone();
    for b in &fit.blocks {
        if b.features_per_param != fpp || b.gamma.len() != b.params.len() * fpp {
            return Err(Error::Mask(format!("fit for {} has inconsistent shape", b.layer)));
        }
        for (i, &k) in b.params.iter().enumerate() {
            if k >= prior.len() || !prior.is_prunable(k) || covered[k] {
                return Err(Error::Mask(format!(
                    "fit covers parameter {k} which is not a distinct prunable parameter"
                )));
            }
            covered[k] = true;
            if b.coefficients(i).iter().all(|&g| g == 0.0) {
                mask.prune(k)?;
            }
        }
    }
    if let Some(k) = prior.kept_prunable().into_iter().find(|&k| !covered[k]) {
        return Err(Error::Mask(format!("fit does not cover kept parameter {k}")));
    }
    mask.provenance = Provenance {
        iteration,
        method: PruneMethod::Causal,
    };
    Ok(mask)
}
