use nalgebra::{DMatrix, DVector};

use super::{objective_value, penalty_weights, residual, GammaFit, LassoConfig};
use crate::error::{Error, Result};
use crate::recorder::LayerBlock;

/// Active-set passes between exact solves.
const INNER_PASSES: usize = 200;
/// Sign corrections per exact solve, on top of one per live column.
const POLISH_ROUNDS: usize = 64;
/// Largest support the exact solve is attempted on; bigger ones rely on
/// coordinate descent alone.
const POLISH_MAX: usize = 512;
/// Ratio between consecutive penalties on the warm-start path.
const PATH_STEP: f64 = 0.1;
/// Eigenvalue ratio of the unit-norm Gram below which columns are dependent.
const NULL_TOL: f64 = 1e-12;
/// Relative distance under which two columns count as the same feature.
const DUPLICATE_TOL: f64 = 1e-9;

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// One cyclic pass over `cols`; returns the largest coefficient change.
fn sweep(
    block: &LayerBlock,
    cols: &[usize],
    norms2: &[f64],
    thresholds: &[f64],
    gamma: &mut [f64],
    resid: &mut [f64],
) -> f64 {
    let mut max_change = 0.0f64;
    for &j in cols {
        let x = block.column(j);
        let corr: f64 = x.iter().zip(resid.iter()).map(|(a, b)| a * b).sum();
        let rho = corr + norms2[j] * gamma[j];
        let new = soft_threshold(rho, thresholds[j]) / norms2[j];
        let change = new - gamma[j];
        if change != 0.0 {
            for (r, &xv) in resid.iter_mut().zip(x) {
                *r -= change * xv;
            }
            gamma[j] = new;
            max_change = max_change.max(change.abs());
        }
    }
    max_change
}

/// Unit-norm Gram matrix of `cols` and the column norms used to scale it.
fn scaled_gram(block: &LayerBlock, cols: &[usize], norms2: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let scale: Vec<f64> = cols.iter().map(|&j| norms2[j].sqrt()).collect();
    let gram = DMatrix::from_fn(cols.len(), cols.len(), |a, b| {
        let d: f64 = block.column(cols[a]).iter().zip(block.column(cols[b])).map(|(x, y)| x * y).sum();
        d / (scale[a] * scale[b])
    });
    (gram, scale)
}

/// Minimizer of the smooth problem on `active` with the signs fixed to those
/// of `gamma`, or `None` when the Gram system is singular. The solve is
/// refined twice.
fn signed_solve(
    block: &LayerBlock,
    active: &[usize],
    gram: &DMatrix<f64>,
    scale: &[f64],
    thresholds: &[f64],
    gamma: &[f64],
) -> Option<Vec<f64>> {
    let rhs = DVector::from_fn(active.len(), |a, _| {
        let j = active[a];
        let xy: f64 = block.column(j).iter().zip(&block.target).map(|(x, y)| x * y).sum();
        (xy - thresholds[j] * gamma[j].signum()) / scale[a]
    });
    let chol = gram.clone().cholesky()?;
    let mut z = chol.solve(&rhs);
    for _ in 0..2 {
        let r = &rhs - gram * &z;
        z += chol.solve(&r);
    }
    let out: Vec<f64> = (0..active.len()).map(|a| z[a] / scale[a]).collect();
    out.iter().all(|g| g.is_finite()).then_some(out)
}

/// Folds each active column that duplicates an earlier active column (up to
/// rounding) into that column, recording the pair in `aliases`, and returns
/// the folded columns. Without this the coefficient split between the copies
/// is undetermined and coordinate descent drifts along it indefinitely.
fn fold_duplicates(
    block: &LayerBlock,
    cols: &[usize],
    norms2: &[f64],
    gamma: &mut [f64],
    aliases: &mut Vec<(usize, usize)>,
) -> Vec<usize> {
    let active: Vec<usize> = cols.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
    let mut dropped = Vec::new();
    for (i, &a) in active.iter().enumerate() {
        if dropped.contains(&a) {
            continue;
        }
        for &b in &active[i + 1..] {
            if dropped.contains(&b) {
                continue;
            }
            let scale = norms2[a].max(norms2[b]).sqrt();
            let d2: f64 = block.column(a).iter().zip(block.column(b)).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2.sqrt() <= DUPLICATE_TOL * scale {
                gamma[a] += gamma[b];
                gamma[b] = 0.0;
                dropped.push(b);
                aliases.push((a, b));
            }
        }
    }
    dropped
}

/// Shares each folded coefficient evenly among its copies, the minimum-norm
/// point of the optimal set.
fn split_aliases(gamma: &mut [f64], aliases: &[(usize, usize)]) {
    let mut leaders: Vec<usize> = aliases.iter().map(|&(a, _)| a).collect();
    leaders.sort_unstable();
    leaders.dedup();
    for a in leaders {
        let members: Vec<usize> = aliases.iter().filter(|p| p.0 == a).map(|p| p.1).collect();
        let share = gamma[a] / (members.len() + 1) as f64;
        gamma[a] = share;
        for b in members {
            gamma[b] = share;
        }
    }
}

/// Feature-sign search on the current support. While the active columns are
/// linearly dependent, steps along a null direction that lowers the penalty
/// until a coefficient reaches zero (the fit is unchanged). Once they are
/// independent, solves exactly for the current signs; when a sign would
/// flip, moves to the best zero crossing on the segment instead. Never
/// increases the objective beyond rounding. Returns whether it ended on the
/// exact minimizer for the final support and signs.
#[allow(clippy::too_many_arguments)]
fn polish(
    block: &LayerBlock,
    live: &[usize],
    norms2: &[f64],
    thresholds: &[f64],
    alpha: f64,
    weights: &[f64],
    gamma: &mut [f64],
    rounds: usize,
) -> bool {
    let mut current = objective_value(block, gamma, alpha, weights);
    for _ in 0..rounds {
        let active: Vec<usize> = live.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
        if active.is_empty() {
            return true;
        }
        let subset = &active[..active.len().min(block.rows + 1)];
        if subset.len() > POLISH_MAX {
            return false;
        }
        let (gram, scale) = scaled_gram(block, subset, norms2);
        let eig = gram.clone().symmetric_eigen();
        let (lo, &lambda_min) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let lambda_max = eig.eigenvalues.max();
        if subset.len() < active.len() || lambda_min <= NULL_TOL * lambda_max {
            let mut dir: Vec<f64> = (0..subset.len()).map(|a| eig.eigenvectors[(a, lo)] / scale[a]).collect();
            let slope: f64 = subset.iter().zip(&dir).map(|(&j, d)| thresholds[j] * gamma[j].signum() * d).sum();
            if slope > 0.0 {
                dir.iter_mut().for_each(|d| *d = -*d);
            }
            let crossing = |dir: &[f64]| {
                subset
                    .iter()
                    .zip(dir)
                    .enumerate()
                    .filter(|(_, (&j, &d))| gamma[j] * d < 0.0)
                    .map(|(a, (&j, &d))| (a, -gamma[j] / d))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
            };
            let hit = crossing(&dir).or_else(|| {
                dir.iter_mut().for_each(|d| *d = -*d);
                crossing(&dir)
            });
            let Some((zero, t)) = hit else { return false };
            let mut cand = gamma.to_vec();
            for (a, &j) in subset.iter().enumerate() {
                cand[j] += t * dir[a];
            }
            cand[subset[zero]] = 0.0;
            let v = objective_value(block, &cand, alpha, weights);
            if v > current * (1.0 + 1e-12) {
                return false;
            }
            gamma.copy_from_slice(&cand);
            current = v;
            continue;
        }
        let Some(z) = signed_solve(block, &active, &gram, &scale, thresholds, gamma) else {
            return false;
        };
        let flips: Vec<usize> = (0..active.len())
            .filter(|&a| z[a].signum() != gamma[active[a]].signum() || z[a] == 0.0)
            .collect();
        let at = |t: f64, zero: Option<usize>| {
            let mut g = gamma.to_vec();
            for (a, &j) in active.iter().enumerate() {
                g[j] = gamma[j] + t * (z[a] - gamma[j]);
            }
            if let Some(a) = zero {
                g[active[a]] = 0.0;
            }
            g
        };
        if flips.is_empty() {
            let cand = at(1.0, None);
            let ok = objective_value(block, &cand, alpha, weights) <= current * (1.0 + 1e-12);
            if ok {
                gamma.copy_from_slice(&cand);
            }
            return ok;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &a in &flips {
            let g0 = gamma[active[a]];
            let t = g0 / (g0 - z[a]);
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let cand = at(t, Some(a));
            let v = objective_value(block, &cand, alpha, weights);
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, cand));
            }
        }
        match best {
            Some((v, cand)) if v <= current => {
                gamma.copy_from_slice(&cand);
                current = v;
            }
            _ => return false,
        }
    }
    false
}

/// Unpenalized fit: the minimum-norm least-squares solution on `live`.
fn min_norm_least_squares(block: &LayerBlock, live: &[usize]) -> Result<Vec<f64>> {
    let mut gamma = vec![0.0; block.cols()];
    if live.is_empty() {
        return Ok(gamma);
    }
    let x = DMatrix::from_fn(block.rows, live.len(), |r, c| block.column(live[c])[r]);
    let y = DVector::from_column_slice(&block.target);
    let svd = x.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12 * block.rows.max(live.len()) as f64;
    let z = svd
        .solve(&y, eps)
        .map_err(|e| Error::Shape(format!("least-squares solve failed: {e}")))?;
    for (c, &j) in live.iter().enumerate() {
        gamma[j] = z[c];
    }
    Ok(gamma)
}

/// Exact lasso by cyclic coordinate descent with soft-thresholding.
///
/// Minimizes `½‖y − Xγ‖² + α Σ w_k |γ_k|` (`w_k = 1`, or the column norm when
/// standardizing). Columns are visited in index order. After each full pass
/// the solver iterates on the non-zero coordinates; once those settle or
/// stall, duplicated columns are folded into their first copy and the
/// support is solved exactly by feature-sign search. Folded coefficients are
/// shared evenly among the copies at the end. With `α = 0` the
/// minimum-norm least-squares solution is returned directly. Converged when the largest coefficient
/// change in a full pass is at most `tol · max|γ|`. Dead columns stay zero.
pub fn fit_cd(block: &LayerBlock, cfg: &LassoConfig) -> Result<GammaFit> {
    cfg.validate()?;
    if block.rows == 0 {
        return Err(Error::Shape("lasso needs at least one row".into()));
    }
    let cols = block.cols();
    let weights = penalty_weights(block, cfg.standardize);
    let norms2: Vec<f64> = (0..cols)
        .map(|j| block.column(j).iter().map(|v| v * v).sum())
        .collect();
    let mut live: Vec<usize> = (0..cols).filter(|&j| !block.is_dead(j) && norms2[j] > 0.0).collect();

    if cfg.alpha == 0.0 {
        let gamma = min_norm_least_squares(block, &live)?;
        return Ok(GammaFit::finish(block, gamma, cfg, &weights, 0, true));
    }

    // Warm-start down a geometric path from the smallest all-zero α.
    let start = live
        .iter()
        .map(|&j| {
            let xy: f64 = block.column(j).iter().zip(&block.target).map(|(x, y)| x * y).sum();
            xy.abs() / weights[j]
        })
        .fold(0.0, f64::max);
    let mut path = Vec::new();
    let mut a = start * PATH_STEP;
    while a > cfg.alpha {
        path.push(a);
        a *= PATH_STEP;
    }
    path.push(cfg.alpha);

    let mut gamma = vec![0.0; cols];
    let mut aliases = Vec::new();
    let mut epochs = 0usize;
    let mut last_change = 0.0;
    let mut converged = false;
    for (i, &alpha) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        let budget = if last { cfg.max_epochs - epochs } else { (cfg.max_epochs - epochs) / 4 };
        if budget == 0 {
            continue;
        }
        let (used, change, ok) = descend(
            block,
            &mut live,
            &norms2,
            &weights,
            alpha,
            cfg.tol,
            budget,
            &mut gamma,
            &mut aliases,
        );
        epochs += used;
        last_change = change;
        converged = ok;
    }

    split_aliases(&mut gamma, &aliases);
    let fit = GammaFit::finish(block, gamma, cfg, &weights, epochs, converged);
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            epochs,
            max_change: last_change,
            last: Box::new(fit),
        })
    }
}

/// Lasso at one α from the current `gamma`. Returns the epochs used, the
/// last full-pass change and whether it converged within `budget`.
///
/// Each epoch is a full coordinate-descent pass. When that pass does not meet
/// the convergence test its result is discarded; instead the columns that
/// most violate optimality each get one coordinate update and the support is
/// solved exactly (feature-sign search), falling back to coordinate passes on
/// the support when the exact solve is out of reach.
#[allow(clippy::too_many_arguments)]
fn descend(
    block: &LayerBlock,
    live: &mut Vec<usize>,
    norms2: &[f64],
    weights: &[f64],
    alpha: f64,
    tol: f64,
    budget: usize,
    gamma: &mut [f64],
    aliases: &mut Vec<(usize, usize)>,
) -> (usize, f64, bool) {
    let thresholds: Vec<f64> = weights.iter().map(|w| alpha * w).collect();
    let max_abs = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut epochs = 0usize;
    let mut last_change = 0.0;
    if live.is_empty() {
        return (0, 0.0, true);
    }
    while epochs < budget {
        let mut resid = residual(block, gamma);
        let mut trial = gamma.to_vec();
        let mut trial_resid = resid.clone();
        let change = sweep(block, live, norms2, &thresholds, &mut trial, &mut trial_resid);
        epochs += 1;
        last_change = change;
        if change <= tol * max_abs(&trial) {
            gamma.copy_from_slice(&trial);
            return (epochs, last_change, true);
        }

        let mut violators: Vec<(f64, usize)> = live
            .iter()
            .filter(|&&j| gamma[j] == 0.0)
            .filter_map(|&j| {
                let c: f64 = block.column(j).iter().zip(&resid).map(|(x, r)| x * r).sum();
                let v = (c.abs() - thresholds[j]) / norms2[j].sqrt();
                (v > 0.0).then_some((v, j))
            })
            .collect();
        violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let support = live.iter().filter(|&&j| gamma[j] != 0.0).count();
        let admit: Vec<usize> = violators.iter().take(1 + support / 4).map(|&(_, j)| j).collect();
        sweep(block, &admit, norms2, &thresholds, gamma, &mut resid);

        let mut working: Vec<usize> = live.iter().copied().filter(|&j| gamma[j] != 0.0).collect();
        let dropped = fold_duplicates(block, &working, norms2, gamma, aliases);
        if !dropped.is_empty() {
            live.retain(|j| !dropped.contains(j));
            working.retain(|j| !dropped.contains(j));
        }
        let rounds = POLISH_ROUNDS + working.len();
        if !polish(block, &working, norms2, &thresholds, alpha, weights, gamma, rounds) {
            let mut resid = residual(block, gamma);
            for _ in 0..INNER_PASSES {
                if epochs >= budget {
                    break;
                }
                let change = sweep(block, &working, norms2, &thresholds, gamma, &mut resid);
                epochs += 1;
                if change <= tol * max_abs(gamma) {
                    break;
                }
            }
        }
    }
    (epochs, last_change, false)
}
