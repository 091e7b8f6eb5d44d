use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lasso::{extract_mask, fit_dataset, LassoConfig};
use crate::mask::{PruneMask, PruneMethod};
use crate::model::ModelSpec;
use crate::recorder::DeltaDataset;

/// The configuration value a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    L1Coeff,
    MagPruneFrac,
    NIter,
    NPrune,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::L1Coeff => "l1_coeff",
            SweepParam::MagPruneFrac => "mag_prune_frac",
            SweepParam::NIter => "n_iter",
            SweepParam::NPrune => "n_prune",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        let count = || {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("{} must be a whole number, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::L1Coeff => cfg.lasso.alpha = value,
            SweepParam::MagPruneFrac => cfg.magnitude.mag_prune_frac = value,
            SweepParam::NIter => cfg.schedule.n_iter = count()?,
            SweepParam::NPrune => cfg.schedule.n_prune = count()?,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub percent_pruned: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub value: f64,
    pub seeds: usize,
    pub median_percent_pruned: f64,
    pub median_val_accuracy: f64,
    pub median_test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub method: PruneMethod,
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    /// Per-seed rows followed by one `median` row per sweep value.
    pub fn write_csv(&self, w: impl Write, config_hash: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config_hash",
            "method",
            "param",
            "value",
            "seed",
            "percent_pruned",
            "val_accuracy",
            "test_accuracy",
        ])?;
        let head = |value: f64| {
            vec![
                config_hash.to_string(),
                self.method.to_string(),
                self.param.name().to_string(),
                format!("{value:e}"),
            ]
        };
        for r in &self.rows {
            let mut rec = head(r.value);
            rec.extend([
                r.seed.to_string(),
                format!("{:.6}", r.percent_pruned),
                format!("{:.6}", r.val_accuracy),
                format!("{:.6}", r.test_accuracy),
            ]);
            out.write_record(&rec)?;
        }
        for s in &self.summary {
            let mut rec = head(s.value);
            rec.extend([
                "median".to_string(),
                format!("{:.6}", s.median_percent_pruned),
                format!("{:.6}", s.median_val_accuracy),
                format!("{:.6}", s.median_test_accuracy),
            ]);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Median of a non-empty slice; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `n` values evenly spaced in log10 between `10^lo` and `10^hi`.
/// The default sweep spans `1e-18` to `1e-11`.
pub fn log_alpha_grid(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo_exp)];
    }
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

/// One run per `(value, seed)`, executed on a pool of `workers` threads;
/// rows come back in `(value, seed)` order regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &RunConfig,
    method: PruneMethod,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    workers: usize,
) -> Result<SweepTable> {
    if values.len() < 2 {
        return Err(Error::Config("a sweep needs at least two points".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list must not be empty".into()));
    }
    let mut jobs = Vec::new();
    for (pi, &v) in values.iter().enumerate() {
        let mut c = cfg.clone();
        param.apply(&mut c, v)?;
        c.validate(method)?;
        for &s in seeds {
            let mut cj = c.clone();
            if let Some(dir) = &cfg.trajectory_dir {
                cj.trajectory_dir = Some(dir.join(format!("point{pi}_seed{s}")));
            }
            jobs.push((v, s, cj));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|(v, s, c)| {
                let r = run(spec, data, c, *s, method)?;
                Ok(SweepRow {
                    value: *v,
                    seed: *s,
                    percent_pruned: r.percent_pruned(),
                    val_accuracy: r.val_accuracy,
                    test_accuracy: r.test_accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = values
        .iter()
        .map(|&v| {
            let pts: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v).collect();
            let col = |f: fn(&SweepRow) -> f64| median(&pts.iter().map(|r| f(r)).collect::<Vec<_>>());
            SweepSummary {
                value: v,
                seeds: pts.len(),
                median_percent_pruned: col(|r| r.percent_pruned),
                median_val_accuracy: col(|r| r.val_accuracy),
                median_test_accuracy: col(|r| r.test_accuracy),
            }
        })
        .collect();
    Ok(SweepTable {
        method,
        param,
        rows,
        summary,
    })
}

/// Causal pruning across a list of L1 coefficients.
pub fn sweep_phase_shift(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &RunConfig,
    alphas: &[f64],
    seeds: &[u64],
    workers: usize,
) -> Result<SweepTable> {
    sweep(spec, data, cfg, PruneMethod::Causal, SweepParam::L1Coeff, alphas, seeds, workers)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayPoint {
    pub alpha: f64,
    pub pruned: usize,
    pub l1_norm: f64,
    pub objective: f64,
}

/// Refits one fixed delta dataset for every α, without retraining.
pub fn replay_sweep(
    deltas: &DeltaDataset,
    prior: &PruneMask,
    lasso: &LassoConfig,
    alphas: &[f64],
) -> Result<Vec<ReplayPoint>> {
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = LassoConfig {
                alpha,
                ..lasso.clone()
            };
            let fit = fit_dataset(deltas, &cfg)?;
            let mask = extract_mask(&fit, prior, 1)?;
            Ok(ReplayPoint {
                alpha,
                pruned: mask.pruned_count(),
                l1_norm: fit.l1_norm(),
                objective: fit.objective(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::model::{Activation, LossKind};
    use crate::optim::OptimizerConfig;
    use crate::prune::PruneSchedule;
    use crate::recorder::{ProbeMode, SnapshotPrecision};

    fn cfg() -> RunConfig {
        RunConfig {
            schedule: PruneSchedule {
                n_pre: 1,
                n_iter: 1,
                n_prune: 2,
                n_post: 2,
            },
            train_optimizer: OptimizerConfig::sgd(0.05),
            prune_optimizer: OptimizerConfig::sgd(0.05),
            batch_size: 16,
            probe: ProbeMode::Fixed,
            precision: SnapshotPrecision::F64,
            ..RunConfig::default()
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_alpha_grid(-18.0, -11.0, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] / 1e-18 - 1.0).abs() < 1e-12 && (g[7] / 1e-11 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_of_alpha_sweep() {
        let ds = synth_blobs(2, 2, 30, 3.0, 0).unwrap();
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Tanh, LossKind::CrossEntropy);
        let t = sweep_phase_shift(&spec, &ds, &cfg(), &[0.0, 1e6], &[0, 1], 2).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.summary.len(), 2);
        assert!(t.summary[0].median_percent_pruned < 5.0);
        assert_eq!(t.summary[1].median_percent_pruned, 100.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, "h").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn sweep_rejects_bad_inputs() {
        let ds = synth_blobs(2, 2, 30, 3.0, 0).unwrap();
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Relu, LossKind::CrossEntropy);
        assert!(sweep_phase_shift(&spec, &ds, &cfg(), &[0.0, 1.0], &[], 1).is_err());
        assert!(sweep_phase_shift(&spec, &ds, &cfg(), &[0.0], &[0], 1).is_err());
        assert!(sweep(&spec, &ds, &cfg(), PruneMethod::Causal, SweepParam::NIter, &[1.0, 2.5], &[0], 1).is_err());
    }
}
