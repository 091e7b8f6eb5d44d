//! Curvature at a trained point: Hessian-vector products, the leading
//! Hessian eigenvalues by deflated power iteration, and 2-D loss landscapes.

mod landscape;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use landscape::{landscape_grid, normalized_direction, LandscapeGrid, Scaling};

use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::model::{Batch, Objective};

const DENSE_CAP: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessConfig {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Finite-difference step for Hessian-vector products.
    pub epsilon: f64,
    /// Samples in the fixed evaluation batch.
    pub eval_batch_size: usize,
    pub resolution: usize,
    pub scaling: Scaling,
    pub direction_seeds: [u64; 2],
    /// Start-vector seed for power iteration.
    pub seed: u64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        FlatnessConfig {
            k: 3,
            tol: 1e-10,
            max_iter: 5000,
            epsilon: 1e-4,
            eval_batch_size: 512,
            resolution: 25,
            scaling: Scaling::Raw,
            direction_seeds: [1, 2],
            seed: 0,
        }
    }
}

impl FlatnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.tol > 0.0) || !(self.epsilon > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("flatness tol, epsilon and max_iter must be positive".into()));
        }
        if self.resolution < 3 || self.resolution % 2 == 0 {
            return Err(Error::Config(format!(
                "landscape resolution must be odd and >= 3, got {}",
                self.resolution
            )));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `H·v` for the mean loss over `batches`, by central differences of the
/// gradient with step `eps / ‖v‖`.
pub fn hvp(obj: &impl Objective, params: &[f64], batches: &[Batch], v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() != params.len() {
        return Err(Error::Shape(format!("direction of {} for {} params", v.len(), params.len())));
    }
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let h = eps / nv;
    let shifted = |sign: f64| -> Vec<f64> { params.iter().zip(v).map(|(p, d)| p + sign * h * d).collect() };
    let (_, gp) = obj.mean_loss_and_grad(&shifted(1.0), batches)?;
    let (_, gm) = obj.mean_loss_and_grad(&shifted(-1.0), batches)?;
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Hessian-vector product".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Final `|λ⁽ⁿ⁾ − λ⁽ⁿ⁻¹⁾| / max(|λ⁽ⁿ⁾|, 1)` per eigenvalue.
    pub residuals: Vec<f64>,
    pub tol: f64,
    pub batches: String,
    /// Parameters the iteration ran over (kept coordinates only).
    pub free_params: usize,
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
}

impl FlatnessReport {
    pub fn to_toml(&self, config_hash: &str) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            config_hash: &'a str,
            #[serde(flatten)]
            report: &'a FlatnessReport,
        }
        toml::to_string(&Out { config_hash, report: self }).unwrap_or_default()
    }
}

fn describe(batches: &[Batch]) -> String {
    let total: usize = batches.iter().map(Batch::size).sum();
    format!("{} fixed batch(es), {total} samples", batches.len())
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // twice, for numerical orthogonality
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Leading `k` eigenvalues of the Hessian by power iteration with
/// deflation. With a mask, pruned coordinates are zeroed in the parameters
/// and excluded from every iterate, giving the spectrum of the subnetwork.
pub fn top_eigenvalues(
    obj: &impl Objective,
    params: &[f64],
    batches: &[Batch],
    mask: Option<&PruneMask>,
    cfg: &FlatnessConfig,
) -> Result<FlatnessReport> {
    cfg.validate()?;
    let n = params.len();
    let free: Vec<bool> = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::Shape(format!("mask of {} for {n} params", m.len())));
        }
        Some(m) => m.keep_flags().to_vec(),
        None => vec![true; n],
    };
    let n_free = free.iter().filter(|&&f| f).count();
    if cfg.k > n_free {
        return Err(Error::Config(format!("k = {} exceeds the {n_free} free parameters", cfg.k)));
    }
    let mut theta = params.to_vec();
    if let Some(m) = mask {
        m.apply(&mut theta);
    }
    let restrict = |v: &mut [f64]| {
        v.iter_mut().zip(&free).for_each(|(x, &f)| {
            if !f {
                *x = 0.0
            }
        })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FlatnessReport {
        eigenvalues: Vec::new(),
        iterations: Vec::new(),
        residuals: Vec::new(),
        tol: cfg.tol,
        batches: describe(batches),
        free_params: n_free,
        eigenvectors: Vec::new(),
    };
    for index in 0..cfg.k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        restrict(&mut v);
        orthogonalize(&mut v, &report.eigenvectors);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        let mut lambda = f64::NAN;
        let mut done = None;
        for it in 1..=cfg.max_iter {
            let mut w = hvp(obj, &theta, batches, &v, cfg.epsilon)?;
            restrict(&mut w);
            orthogonalize(&mut w, &report.eigenvectors);
            let next = dot(&v, &w);
            let nw = norm(&w);
            let change = (next - lambda).abs() / next.abs().max(1.0);
            lambda = next;
            if nw == 0.0 {
                done = Some((it, 0.0));
                break;
            }
            v = w.into_iter().map(|x| x / nw).collect();
            if change <= cfg.tol {
                done = Some((it, change));
                break;
            }
        }
        let Some((iters, residual)) = done else {
            return Err(Error::EigenNotConverged {
                index,
                iterations: cfg.max_iter,
            });
        };
        orthogonalize(&mut v, &report.eigenvectors);
        let nv = norm(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|x| *x /= nv);
        }
        report.eigenvalues.push(lambda);
        report.iterations.push(iters);
        report.residuals.push(residual);
        report.eigenvectors.push(v);
    }
    let mut order: Vec<usize> = (0..cfg.k).collect();
    order.sort_by(|&a, &b| report.eigenvalues[b].total_cmp(&report.eigenvalues[a]));
    let pick = |xs: &[f64]| order.iter().map(|&i| xs[i]).collect::<Vec<_>>();
    report.eigenvalues = pick(&report.eigenvalues);
    report.residuals = pick(&report.residuals);
    report.iterations = order.iter().map(|&i| report.iterations[i]).collect();
    report.eigenvectors = order.iter().map(|&i| report.eigenvectors[i].clone()).collect();
    Ok(report)
}

/// Finite-difference Hessian, one Hessian-vector product per column.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHessian {
    pub n: usize,
    /// Row-major, symmetrized as `(H + Hᵀ)/2`.
    pub data: Vec<f64>,
    /// `max|H − Hᵀ| / max|H|` before symmetrization.
    pub asymmetry: f64,
}

impl DenseHessian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

pub fn dense_hessian(obj: &impl Objective, params: &[f64], batches: &[Batch], eps: f64) -> Result<DenseHessian> {
    let n = params.len();
    if n > DENSE_CAP {
        return Err(Error::Config(format!("dense Hessian limited to {DENSE_CAP} params, got {n}")));
    }
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(hvp(obj, params, batches, &e, eps)?);
    }
    let raw = |i: usize, j: usize| cols[j][i];
    let mut data = vec![0.0; n * n];
    let (mut max_abs, mut max_diff) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = 0.5 * (raw(i, j) + raw(j, i));
            max_abs = max_abs.max(raw(i, j).abs());
            max_diff = max_diff.max((raw(i, j) - raw(j, i)).abs());
        }
    }
    Ok(DenseHessian {
        n,
        data,
        asymmetry: if max_abs > 0.0 { max_diff / max_abs } else { 0.0 },
    })
}

pub fn write_report(report: &FlatnessReport, mut w: impl Write, config_hash: &str) -> Result<()> {
    w.write_all(report.to_toml(config_hash).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_model, Activation, LinearObjective, LossKind, ModelSpec, Network, QuadraticObjective, Targets,
    };
    use nalgebra::{DMatrix, SymmetricEigen};

    fn dummy() -> Vec<Batch> {
        vec![Batch::new(vec![0.0], Targets::Classes(vec![0]), 1).unwrap()]
    }

    fn small_net(seed: u64) -> (Network, Vec<f64>, Vec<Batch>) {
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Tanh, LossKind::CrossEntropy);
        let net = Network::new(&spec).unwrap();
        let p = build_model(&spec, seed).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<usize> = (0..32).map(|i| i % 2).collect();
        (net, p, vec![Batch::new(x, Targets::Classes(y), 2).unwrap()])
    }

    #[test]
    fn hvp_on_diagonal_quadratic() {
        let q = QuadraticObjective { diag: vec![1.0, 4.0] };
        let p = [0.3, -0.2];
        let a = hvp(&q, &p, &dummy(), &[1.0, 0.0], 1e-4).unwrap();
        let b = hvp(&q, &p, &dummy(), &[0.0, 1.0], 1e-4).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-9 && a[1].abs() < 1e-9);
        assert!(b[0].abs() < 1e-9 && (b[1] - 4.0).abs() < 1e-9);
        assert_eq!(hvp(&q, &p, &dummy(), &[0.0, 0.0], 1e-4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hvp_is_symmetric() {
        let (net, p, b) = small_net(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let u: Vec<f64> = (0..p.len()).map(|_| rng.sample(StandardNormal)).collect();
            let v: Vec<f64> = (0..p.len()).map(|_| rng.sample(StandardNormal)).collect();
            let uhv = dot(&u, &hvp(&net, &p, &b, &v, 1e-4).unwrap());
            let vhu = dot(&v, &hvp(&net, &p, &b, &u, 1e-4).unwrap());
            assert!((uhv - vhu).abs() <= 1e-6 * uhv.abs().max(vhu.abs()), "{uhv} vs {vhu}");
        }
    }

    #[test]
    fn quadratic_spectrum() {
        let q = QuadraticObjective { diag: vec![1.0, 4.0] };
        let cfg = FlatnessConfig { k: 2, ..Default::default() };
        let r = top_eigenvalues(&q, &[0.0, 0.0], &dummy(), None, &cfg).unwrap();
        assert!((r.eigenvalues[0] - 4.0).abs() < 1e-6 && (r.eigenvalues[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn negative_definite_sign_recovered() {
        let q = QuadraticObjective { diag: vec![-1.0, -4.0] };
        let cfg = FlatnessConfig { k: 1, ..Default::default() };
        let r = top_eigenvalues(&q, &[0.1, 0.1], &dummy(), None, &cfg).unwrap();
        assert!((r.eigenvalues[0] + 4.0).abs() < 1e-6);
    }

    #[test]
    fn k_beyond_free_params() {
        let q = QuadraticObjective { diag: vec![1.0, 4.0] };
        let cfg = FlatnessConfig { k: 3, ..Default::default() };
        assert!(top_eigenvalues(&q, &[0.0, 0.0], &dummy(), None, &cfg).is_err());
    }

    #[test]
    fn matches_dense_oracle() {
        let (net, p, b) = small_net(1);
        let cfg = FlatnessConfig::default();
        let r = top_eigenvalues(&net, &p, &b, None, &cfg).unwrap();
        let h = dense_hessian(&net, &p, &b, 1e-4).unwrap();
        assert!(h.asymmetry <= 1e-4, "{}", h.asymmetry);
        let m = DMatrix::from_row_slice(h.n, h.n, &h.data);
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        let mut top: Vec<f64> = ev[..3].to_vec();
        top.sort_by(|a, b| b.total_cmp(a));
        for (a, e) in r.eigenvalues.iter().zip(&top) {
            assert!((a - e).abs() <= 1e-3 * e.abs(), "{a} vs {e}");
        }
        for i in 0..3 {
            for j in 0..i {
                assert!(dot(&r.eigenvectors[i], &r.eigenvectors[j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn pruned_slots_do_not_matter() {
        let (net, p, b) = small_net(2);
        let mut mask = PruneMask::all_kept(net.layer_map());
        for k in [0, 3, 5] {
            mask.prune(k).unwrap();
        }
        let cfg = FlatnessConfig::default();
        let a = top_eigenvalues(&net, &p, &b, Some(&mask), &cfg).unwrap();
        let mut q = p.clone();
        for k in [0, 3, 5] {
            q[k] = 7.5;
        }
        let c = top_eigenvalues(&net, &q, &b, Some(&mask), &cfg).unwrap();
        assert_eq!(a.eigenvalues, c.eigenvalues);
        assert!(a.eigenvectors.iter().all(|v| [0, 3, 5].iter().all(|&k| v[k] == 0.0)));
    }

    #[test]
    fn dense_hessian_toys() {
        let q = QuadraticObjective { diag: vec![2.0] };
        let h = dense_hessian(&q, &[0.7], &dummy(), 1e-4).unwrap();
        assert!((h.get(0, 0) - 2.0).abs() < 1e-9);
        let l = LinearObjective { coeffs: vec![1.0, -2.0, 3.0] };
        let h = dense_hessian(&l, &[0.1, 0.2, 0.3], &dummy(), 1e-4).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.0));
        let big = QuadraticObjective { diag: vec![1.0; 513] };
        assert!(dense_hessian(&big, &[0.0; 513], &dummy(), 1e-4).is_err());
    }
}
