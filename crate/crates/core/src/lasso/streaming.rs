use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{penalty_weights, GammaFit, LassoConfig};
use crate::error::{Error, Result};
use crate::recorder::LayerBlock;

/// Step size as a fraction of `1 / max_t ‖x_t‖²`.
const STEP: f64 = 0.5;
/// Optimality violation, relative to `α`, that counts as settled.
const SETTLE: f64 = 1e-3;

/// Row-streaming lasso: per-row gradient steps on the squared residual with
/// the cumulative L1 penalty applied by clipping at zero.
///
/// Each row carries `α/T` of the penalty. `u` accumulates the total penalty
/// every coefficient could have received so far; `q_k` what coefficient `k`
/// actually received. After a gradient update the coefficient is pulled
/// toward zero by the outstanding amount but never across it, so pruned
/// coefficients are exact zeros.
///
/// Row gradients are variance-reduced against a snapshot taken at the start
/// of every epoch (one extra pass over the rows), which lets a constant step
/// converge. The snapshot pass also yields the correlations `Xᵀr` used as the
/// stopping test.
pub fn fit_streaming(block: &LayerBlock, cfg: &LassoConfig) -> Result<GammaFit> {
    cfg.validate()?;
    let rows = block.rows;
    if rows == 0 {
        return Err(Error::Shape("lasso needs at least one row".into()));
    }
    let cols = block.cols();
    let weights = penalty_weights(block, cfg.standardize);
    let live: Vec<usize> = (0..cols).filter(|&j| !block.is_dead(j)).collect();
    let mut gamma = vec![0.0; cols];
    if live.is_empty() {
        return Ok(GammaFit::finish(block, gamma, cfg, &weights, 0, true));
    }

    // Row-major copy of the live columns, keeping only non-zero entries.
    let sparse_rows: Vec<Vec<(usize, f64)>> = (0..rows)
        .map(|t| {
            live.iter()
                .filter_map(|&j| {
                    let v = block.column(j)[t];
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let max_norm2 = sparse_rows
        .iter()
        .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    let eta = STEP / max_norm2;
    let per_row = cfg.alpha / rows as f64;
    let predict = |g: &[f64], t: usize| sparse_rows[t].iter().map(|&(j, v)| g[j] * v).sum::<f64>();

    let mut u = 0.0;
    let mut q = vec![0.0; cols];
    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut epochs = 0;
    let mut converged = false;
    let mut snapshot_resid = vec![0.0; rows];
    let mut mean_grad = vec![0.0; cols];

    while epochs < cfg.max_epochs {
        // snapshot pass: residuals and the mean row gradient −Xᵀr / T
        mean_grad.iter_mut().for_each(|g| *g = 0.0);
        for t in 0..rows {
            snapshot_resid[t] = block.target[t] - predict(&gamma, t);
            for &(j, v) in &sparse_rows[t] {
                mean_grad[j] -= v * snapshot_resid[t];
            }
        }
        let violation = live
            .iter()
            .map(|&j| {
                let c = -mean_grad[j];
                let thr = cfg.alpha * weights[j];
                if gamma[j] == 0.0 {
                    (c.abs() - thr).max(0.0)
                } else {
                    (c - thr * gamma[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max);
        let scale = cfg.alpha.max(f64::MIN_POSITIVE) * weights.iter().fold(0.0f64, |m, w| m.max(*w));
        if violation <= SETTLE * scale {
            converged = true;
            break;
        }
        mean_grad.iter_mut().for_each(|g| *g /= rows as f64);
        let snapshot = gamma.clone();

        order.shuffle(&mut rng);
        for &t in &order {
            u += eta * per_row;
            let drift = predict(&snapshot, t) - predict(&gamma, t) + snapshot_resid[t];
            let row = &sparse_rows[t];
            let mut step = mean_grad.clone();
            for &(j, v) in row {
                // ∇f_t(γ) − ∇f_t(γ̃) with f_t = ½(y_t − x_tγ)²
                step[j] += -v * drift + v * snapshot_resid[t];
            }
            for &j in &live {
                if step[j] == 0.0 {
                    continue;
                }
                let z0 = gamma[j];
                gamma[j] -= eta * step[j];
                let budget = u * weights[j];
                if gamma[j] > 0.0 {
                    gamma[j] = (gamma[j] - (budget + q[j])).max(0.0);
                } else if gamma[j] < 0.0 {
                    gamma[j] = (gamma[j] + (budget - q[j])).min(0.0);
                }
                q[j] += gamma[j] - z0 + eta * step[j];
            }
        }
        epochs += 1;
    }
    let fit = GammaFit::finish(block, gamma, cfg, &weights, epochs, converged);
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            epochs,
            max_change: f64::NAN,
            last: Box::new(fit),
        })
    }
}
