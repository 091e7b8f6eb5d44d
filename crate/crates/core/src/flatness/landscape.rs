use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::norm;
use crate::error::{Error, Result};
use crate::mask::PruneMask;
use crate::model::{Batch, LayerMap, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    Raw,
    Log1p,
}

/// Loss values over `(a, b) ∈ [−1, 1]²`, row-major with `a` outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub resolution: usize,
    pub coords: Vec<f64>,
    pub values: Vec<f64>,
    /// Seeds the two directions were actually drawn from.
    pub seeds: [u64; 2],
    pub scaling: Scaling,
}

impl LandscapeGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }

    pub fn center(&self) -> f64 {
        let c = self.resolution / 2;
        self.value(c, c)
    }

    pub fn write_csv(&self, w: impl Write, config_hash: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["config_hash", "a", "b", "value"])?;
        for (i, a) in self.coords.iter().enumerate() {
            for (j, b) in self.coords.iter().enumerate() {
                out.write_record([
                    config_hash.to_string(),
                    a.to_string(),
                    b.to_string(),
                    format!("{:e}", self.value(i, j)),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// A standard-normal direction rescaled filter by filter to the norms of
/// `params`. Each row of a dense weight matrix and each output channel of a
/// convolution is one filter; non-prunable slices (biases) and pruned
/// coordinates are zero. Returns `None` when a random filter has zero norm
/// while its model filter does not.
pub fn normalized_direction(
    params: &[f64],
    layer_map: &LayerMap,
    mask: Option<&PruneMask>,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    if params.len() != layer_map.total_len() {
        return Err(Error::Shape(format!(
            "{} params for a layer map of {}",
            params.len(),
            layer_map.total_len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d: Vec<f64> = (0..params.len()).map(|_| rng.sample(StandardNormal)).collect();
    let kept = |k: usize| mask.is_none_or(|m| m.is_kept(k));
    for (k, v) in d.iter_mut().enumerate() {
        if !kept(k) {
            *v = 0.0;
        }
    }
    for layer in &layer_map.entries {
        if !layer.prunable {
            d[layer.range()].iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        for j in 0..layer.num_filters() {
            let r = layer.filter_range(j);
            let target: f64 = r.clone().filter(|&k| kept(k)).map(|k| params[k] * params[k]).sum::<f64>().sqrt();
            let current = norm(&d[r.clone()]);
            if current == 0.0 {
                if target != 0.0 {
                    return Ok(None);
                }
                continue;
            }
            let s = target / current;
            d[r].iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(Some(d))
}

fn direction_with_retry(
    params: &[f64],
    layer_map: &LayerMap,
    mask: Option<&PruneMask>,
    seed: u64,
) -> Result<(Vec<f64>, u64)> {
    for s in seed..seed.saturating_add(64) {
        if let Some(d) = normalized_direction(params, layer_map, mask, s)? {
            return Ok((d, s));
        }
    }
    Err(Error::Config(format!("no usable random direction from seed {seed}")))
}

/// Loss at `θ* + a·u₁ + b·u₂` on a `resolution × resolution` grid over
/// `[−1, 1]²`, where `θ*` has its pruned coordinates zeroed.
#[allow(clippy::too_many_arguments)]
pub fn landscape_grid(
    obj: &impl Objective,
    params: &[f64],
    layer_map: &LayerMap,
    mask: Option<&PruneMask>,
    batches: &[Batch],
    resolution: usize,
    seeds: [u64; 2],
    scaling: Scaling,
) -> Result<LandscapeGrid> {
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::Config(format!("resolution must be odd and >= 3, got {resolution}")));
    }
    if let Some(m) = mask {
        if m.len() != params.len() {
            return Err(Error::Shape(format!("mask of {} for {} params", m.len(), params.len())));
        }
    }
    let mut theta = params.to_vec();
    if let Some(m) = mask {
        m.apply(&mut theta);
    }
    let (u1, s1) = direction_with_retry(&theta, layer_map, mask, seeds[0])?;
    let (u2, s2) = direction_with_retry(&theta, layer_map, mask, seeds[1])?;
    let coords: Vec<f64> = (0..resolution)
        .map(|i| -1.0 + (2 * i) as f64 / (resolution - 1) as f64)
        .collect();
    let cells: Vec<(f64, f64)> = coords
        .iter()
        .flat_map(|&a| coords.iter().map(move |&b| (a, b)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(a, b)| {
            let point: Vec<f64> = if a == 0.0 && b == 0.0 {
                theta.clone()
            } else {
                theta
                    .iter()
                    .zip(u1.iter().zip(&u2))
                    .map(|(t, (x, y))| t + a * x + b * y)
                    .collect()
            };
            let raw = obj.mean_loss(&point, batches)?;
            match scaling {
                Scaling::Raw => Ok(raw),
                Scaling::Log1p if raw >= 0.0 => Ok(raw.ln_1p()),
                Scaling::Log1p => Err(Error::Config(format!("log1p scaling needs a non-negative loss, got {raw}"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        resolution,
        coords,
        values,
        seeds: [s1, s2],
        scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Activation, LossKind, ModelSpec, Network, Targets};

    fn setup() -> (Network, Vec<f64>, Vec<Batch>) {
        let spec = ModelSpec::mlp(&[3, 5, 2], Activation::Tanh, LossKind::CrossEntropy);
        let net = Network::new(&spec).unwrap();
        let p = build_model(&spec, 4).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let y = (0..10).map(|i| i % 2).collect();
        (net, p, vec![Batch::new(x, Targets::Classes(y), 3).unwrap()])
    }

    #[test]
    fn center_is_exact_loss() {
        let (net, p, b) = setup();
        let g = landscape_grid(&net, &p, net.layer_map(), None, &b, 5, [1, 2], Scaling::Raw).unwrap();
        assert_eq!(g.values.len(), 25);
        assert_eq!(g.center(), net.mean_loss(&p, &b).unwrap());
        let h = landscape_grid(&net, &p, net.layer_map(), None, &b, 5, [7, 9], Scaling::Raw).unwrap();
        assert_eq!(g.center(), h.center());
    }

    #[test]
    fn filter_norms_match() {
        let (net, p, _) = setup();
        let mut mask = PruneMask::all_kept(net.layer_map());
        mask.prune(1).unwrap();
        let mut theta = p.clone();
        mask.apply(&mut theta);
        let d = normalized_direction(&theta, net.layer_map(), Some(&mask), 3).unwrap().unwrap();
        assert_eq!(d[1], 0.0);
        for layer in &net.layer_map().entries {
            if !layer.prunable {
                assert!(d[layer.range()].iter().all(|&v| v == 0.0));
                continue;
            }
            for j in 0..layer.num_filters() {
                let r = layer.filter_range(j);
                let (a, b) = (norm(&d[r.clone()]), norm(&theta[r]));
                assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn log1p_scaling() {
        let (net, p, b) = setup();
        let raw = landscape_grid(&net, &p, net.layer_map(), None, &b, 3, [1, 2], Scaling::Raw).unwrap();
        let log = landscape_grid(&net, &p, net.layer_map(), None, &b, 3, [1, 2], Scaling::Log1p).unwrap();
        for (r, l) in raw.values.iter().zip(&log.values) {
            assert_eq!(*l, r.ln_1p());
        }
    }

    #[test]
    fn even_resolution_rejected() {
        let (net, p, b) = setup();
        assert!(landscape_grid(&net, &p, net.layer_map(), None, &b, 4, [1, 2], Scaling::Raw).is_err());
    }

    #[test]
    fn csv_rows() {
        let (net, p, b) = setup();
        let g = landscape_grid(&net, &p, net.layer_map(), None, &b, 5, [1, 2], Scaling::Raw).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf, "h").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 26);
    }
}
