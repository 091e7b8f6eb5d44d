//! Deterministic dataset provisioning and minibatch ordering.

mod idx;
mod synth;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use idx::{load_idx, load_idx_dataset, read_idx_images, read_idx_labels};
pub use synth::{synth_blobs, synth_dead_features};

use crate::error::{Error, Result};
use crate::model::{Batch, Targets};

/// Per-feature min-max scaling fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    fn fit(batch: &Batch) -> Self {
        let d = batch.sample_len;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..batch.size() {
            for (j, &v) in batch.sample(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Normalization { min, max }
    }

    /// Constant features map to exactly zero.
    fn apply(&self, batch: &mut Batch) {
        let d = batch.sample_len;
        for (i, v) in batch.inputs.iter_mut().enumerate() {
            let j = i % d;
            let range = self.max[j] - self.min[j];
            *v = if range > 0.0 { (*v - self.min[j]) / range } else { 0.0 };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// Splits already-shuffled samples 80/10/10 and min-max scales every split
    /// with the training statistics.
    pub(crate) fn from_samples(samples: Vec<(Vec<f64>, usize)>, input_shape: Vec<usize>, classes: usize) -> Result<Self> {
        let n = samples.len();
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        if n_train == 0 || n_val == 0 || n - n_train - n_val == 0 {
            return Err(Error::Config(format!("{n} samples are too few to split 80/10/10")));
        }
        let d: usize = input_shape.iter().product();
        let to_batch = |part: &[(Vec<f64>, usize)]| -> Result<Batch> {
            let mut inputs = Vec::with_capacity(part.len() * d);
            for (x, _) in part {
                inputs.extend_from_slice(x);
            }
            Batch::new(inputs, Targets::Classes(part.iter().map(|s| s.1).collect()), d)
        };
        let mut train = to_batch(&samples[..n_train])?;
        let mut val = to_batch(&samples[n_train..n_train + n_val])?;
        let mut test = to_batch(&samples[n_train + n_val..])?;
        let norm = Normalization::fit(&train);
        for b in [&mut train, &mut val, &mut test] {
            norm.apply(b);
        }
        Ok(Dataset {
            input_shape,
            classes,
            train,
            val,
            test,
            normalization: Some(norm),
        })
    }

    pub fn split(&self, split: Split) -> &Batch {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// One row per sample: `split,label,x0,…`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["split".to_string(), "label".to_string()];
        header.extend((0..self.input_len()).map(|j| format!("x{j}")));
        out.write_record(&header)?;
        for (name, b) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let Targets::Classes(labels) = &b.targets else { continue };
            for (i, y) in labels.iter().enumerate() {
                let mut row = vec![name.to_string(), y.to_string()];
                row.extend(b.sample(i).iter().map(|v| v.to_string()));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Shuffled minibatches for one epoch; the order depends only on
/// `(seed, epoch)` and the last partial batch is kept.
pub fn batches(samples: &Batch, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.size()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|idx| samples.select(idx)).collect())
}
