use super::batch::Batch;
use crate::error::{Error, Result};

/// A differentiable scalar loss over a flat parameter vector.
///
/// Implementations must be pure: the same `(params, batch)` always yields the
/// same result. Toy objectives ignore the batch.
pub trait Objective: Sync {
    fn num_params(&self) -> usize;

    fn loss(&self, params: &[f64], batch: &Batch) -> Result<f64> {
        self.loss_and_grad(params, batch).map(|(l, _)| l)
    }

    fn loss_and_grad(&self, params: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)>;

    /// Sample-weighted mean loss and gradient over several batches.
    fn mean_loss_and_grad(&self, params: &[f64], batches: &[Batch]) -> Result<(f64, Vec<f64>)> {
        let total: usize = batches.iter().map(Batch::size).sum();
        if total == 0 {
            return Err(Error::Shape("no evaluation samples".into()));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.num_params()];
        for b in batches {
            let w = b.size() as f64 / total as f64;
            let (l, g) = self.loss_and_grad(params, b)?;
            loss += w * l;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += w * gi;
            }
        }
        Ok((loss, grad))
    }

    fn mean_loss(&self, params: &[f64], batches: &[Batch]) -> Result<f64> {
        let total: usize = batches.iter().map(Batch::size).sum();
        if total == 0 {
            return Err(Error::Shape("no evaluation samples".into()));
        }
        let mut loss = 0.0;
        for b in batches {
            loss += b.size() as f64 / total as f64 * self.loss(params, b)?;
        }
        Ok(loss)
    }
}

/// `L(θ) = cᵀθ`.
#[derive(Clone, Debug)]
pub struct LinearObjective {
    pub coeffs: Vec<f64>,
}

impl Objective for LinearObjective {
    fn num_params(&self) -> usize {
        self.coeffs.len()
    }

    fn loss_and_grad(&self, params: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>)> {
        check_len(params.len(), self.coeffs.len())?;
        let loss = params.iter().zip(&self.coeffs).map(|(p, c)| p * c).sum();
        Ok((loss, self.coeffs.clone()))
    }
}

/// `L(θ) = ½ Σ_k d_k θ_k²`, a diagonal quadratic with Hessian `diag(d)`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub diag: Vec<f64>,
}

impl Objective for QuadraticObjective {
    fn num_params(&self) -> usize {
        self.diag.len()
    }

    fn loss_and_grad(&self, params: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>)> {
        check_len(params.len(), self.diag.len())?;
        let loss = 0.5 * params.iter().zip(&self.diag).map(|(p, d)| d * p * p).sum::<f64>();
        let grad = params.iter().zip(&self.diag).map(|(p, d)| d * p).collect();
        Ok((loss, grad))
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape(format!("{got} parameters for an objective over {want}")))
    }
}
