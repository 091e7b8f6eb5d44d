use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};

/// Class centers with every adjacent pair `separation` apart: `±separation/2`
/// along a random unit direction for two classes, a regular polygon in the
/// first two coordinates otherwise.
fn centers(classes: usize, dims: usize, separation: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if classes == 2 {
        let mut u: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|v| *v /= norm);
        let half = separation / 2.0;
        return Ok(vec![
            u.iter().map(|v| -half * v).collect(),
            u.iter().map(|v| half * v).collect(),
        ]);
    }
    if dims < 2 {
        return Err(Error::Config("more than two classes need at least two dimensions".into()));
    }
    let radius = separation / (2.0 * (PI / classes as f64).sin());
    Ok((0..classes)
        .map(|c| {
            let a = 2.0 * PI * c as f64 / classes as f64;
            let mut v = vec![0.0; dims];
            v[0] = radius * a.cos();
            v[1] = radius * a.sin();
            v
        })
        .collect())
}

fn validate(classes: usize, dims: usize, per_class: usize) -> Result<()> {
    if classes < 2 || dims == 0 || per_class == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs classes >= 2, dims >= 1, per_class >= 1 (got {classes}, {dims}, {per_class})"
        )));
    }
    if classes * per_class < 10 {
        return Err(Error::Config("synthetic data needs at least 10 samples for an 80/10/10 split".into()));
    }
    Ok(())
}

/// Unit-variance Gaussian clusters, shuffled and split 80/10/10.
pub fn synth_blobs(classes: usize, dims: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    validate(classes, dims, per_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = centers(classes, dims, separation, &mut rng)?;
    let mut samples = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let x: Vec<f64> = center
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push((x, c));
        }
    }
    samples.shuffle(&mut rng);
    Dataset::from_samples(samples, vec![dims], classes)
}

/// Blobs in the first `live_dims` coordinates followed by `dead_dims`
/// coordinates that are exactly zero for every sample.
pub fn synth_dead_features(
    live_dims: usize,
    dead_dims: usize,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    if dead_dims == 0 {
        return Err(Error::Config("dead_dims must be >= 1".into()));
    }
    validate(classes, live_dims, per_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = centers(classes, live_dims, 3.0, &mut rng)?;
    let mut samples = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let mut x: Vec<f64> = center
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect();
            x.resize(live_dims + dead_dims, 0.0);
            samples.push((x, c));
        }
    }
    samples.shuffle(&mut rng);
    Dataset::from_samples(samples, vec![live_dims + dead_dims], classes)
}
