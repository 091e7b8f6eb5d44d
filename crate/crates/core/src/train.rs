//! Epoch loops shared by every training phase.

use serde::{Deserialize, Serialize};

use crate::data::batches;
use crate::error::Result;
use crate::mask::PruneMask;
use crate::model::{Batch, Network, Objective};
use crate::optim::Optimizer;
use crate::recorder::{ProbeMode, Trajectory};

/// Derives an independent shuffle seed for one training phase.
pub fn phase_seed(seed: u64, phase: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ phase.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Records `(θᵗ, Lᵗ)` after every step of the epochs it is passed to.
pub struct Recording<'a> {
    pub trajectory: &'a mut Trajectory,
    /// Fixed probe batch; required when the trajectory uses [`ProbeMode::Fixed`].
    pub probe: Option<&'a Batch>,
    batch_counter: u64,
}

impl<'a> Recording<'a> {
    pub fn new(trajectory: &'a mut Trajectory, probe: Option<&'a Batch>) -> Self {
        Recording {
            trajectory,
            probe,
            batch_counter: 0,
        }
    }

    fn eval_batch<'b>(&'b self, step_batch: &'b Batch) -> &'b Batch {
        match (self.trajectory.meta.probe, self.probe) {
            (ProbeMode::Fixed, Some(p)) => p,
            _ => step_batch,
        }
    }
}

/// One pass over `train` in the order given by `(shuffle_seed, epoch)`.
/// Returns the mean minibatch loss seen during the epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    objective: &impl Objective,
    params: &mut [f64],
    mask: &PruneMask,
    opt: &mut Optimizer,
    train: &Batch,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
    mut recording: Option<&mut Recording<'_>>,
) -> Result<f64> {
    let order = batches(train, batch_size, shuffle_seed, epoch)?;
    let mut total = 0.0;
    for b in &order {
        if let Some(rec) = recording.as_deref_mut() {
            if rec.trajectory.is_empty() {
                let l0 = objective.loss(params, rec.eval_batch(b))?;
                rec.trajectory.record_step(0, params, l0, Some(rec.batch_counter))?;
            }
        }
        let (loss, grad) = objective.loss_and_grad(params, b)?;
        total += loss * b.size() as f64;
        opt.step(params, &grad, mask)?;
        if let Some(rec) = recording.as_deref_mut() {
            let t = rec.trajectory.len() as u64;
            let lt = objective.loss(params, rec.eval_batch(b))?;
            let id = rec.batch_counter;
            rec.trajectory.record_step(t, params, lt, Some(id))?;
            rec.batch_counter += 1;
        }
    }
    Ok(total / train.size() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    /// Epochs without sufficient training-loss improvement before stopping.
    pub patience: usize,
    /// Improvement over the best training loss that resets the patience counter.
    pub min_delta: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            patience: 5,
            min_delta: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostTrain {
    /// Parameters of the epoch with the best validation accuracy.
    pub params: Vec<f64>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// Trains up to `max_epochs`, stopping early once the training loss stalls,
/// and keeps the checkpoint with the best validation accuracy.
#[allow(clippy::too_many_arguments)]
pub fn train_with_selection(
    net: &Network,
    mut params: Vec<f64>,
    mask: &PruneMask,
    opt: &mut Optimizer,
    train: &Batch,
    val: &Batch,
    test: &Batch,
    batch_size: usize,
    shuffle_seed: u64,
    max_epochs: usize,
    stopping: &EarlyStopping,
) -> Result<PostTrain> {
    // with no epochs to run the starting point is the only candidate
    let mut best = PostTrain {
        val_accuracy: if max_epochs == 0 { net.accuracy(&params, val)? } else { f64::NEG_INFINITY },
        test_accuracy: f64::NAN,
        params: params.clone(),
        epochs_run: 0,
        best_epoch: 0,
    };
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;
    for e in 0..max_epochs {
        let loss = train_epoch(net, &mut params, mask, opt, train, batch_size, shuffle_seed, e as u64, None)?;
        best.epochs_run = e + 1;
        let acc = net.accuracy(&params, val)?;
        if acc > best.val_accuracy {
            best.val_accuracy = acc;
            best.params.copy_from_slice(&params);
            best.best_epoch = e + 1;
        }
        if loss < best_loss - stopping.min_delta {
            best_loss = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= stopping.patience {
                break;
            }
        }
    }
    best.test_accuracy = net.accuracy(&best.params, test)?;
    Ok(best)
}
