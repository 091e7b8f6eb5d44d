//! Iterative pruning: pretrain, then repeatedly train / select / rewind, then
//! post-train on the final mask.

mod compare;
mod magnitude;
mod sweep;

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use compare::{compare_masks, Contingency};
pub use magnitude::{frac_for_target, magnitude_count_after, magnitude_select};
pub use sweep::{
    log_alpha_grid, median, replay_sweep, sweep, sweep_phase_shift, ReplayPoint, SweepParam, SweepRow,
    SweepSummary, SweepTable,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lasso::{extract_mask, fit_dataset, LassoConfig};
use crate::mask::{PruneMask, PruneMethod};
use crate::model::{build_model, ModelSpec, Network};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::recorder::{
    build_deltas, DeltaMode, ProbeMode, SnapshotPrecision, Trajectory, TrajectoryMeta,
};
use crate::train::{phase_seed, train_epoch, train_with_selection, EarlyStopping, Recording};

const PHASE_PRE: u64 = 1;
const PHASE_POST: u64 = 2;
const PHASE_PRUNE: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    pub n_pre: usize,
    pub n_iter: usize,
    pub n_prune: usize,
    pub n_post: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            n_pre: 5,
            n_iter: 10,
            n_prune: 10,
            n_post: 50,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self, method: PruneMethod) -> Result<()> {
        if method != PruneMethod::None && self.n_iter == 0 {
            return Err(Error::Config(format!("n_iter must be >= 1 for a {method} pruning run")));
        }
        if method != PruneMethod::None && self.n_prune == 0 {
            return Err(Error::Config(format!("n_prune must be >= 1 for a {method} pruning run")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnitudeConfig {
    /// Fraction of the currently kept prunable weights removed per iteration.
    pub mag_prune_frac: f64,
}

impl Default for MagnitudeConfig {
    fn default() -> Self {
        MagnitudeConfig { mag_prune_frac: 0.2 }
    }
}

impl MagnitudeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mag_prune_frac > 0.0 && self.mag_prune_frac < 1.0) {
            return Err(Error::Config(format!(
                "mag_prune_frac must lie in (0, 1), got {}",
                self.mag_prune_frac
            )));
        }
        Ok(())
    }
}

/// Everything a single run needs besides the model, the data and the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub schedule: PruneSchedule,
    /// Optimizer of the pre- and post-training phases.
    pub train_optimizer: OptimizerConfig,
    /// Optimizer of the recorded pruning phase; `beta > 0` selects the momentum model.
    pub prune_optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub probe: ProbeMode,
    /// Samples in the fixed probe batch (the head of the training split).
    pub probe_size: usize,
    pub precision: SnapshotPrecision,
    pub lasso: LassoConfig,
    pub magnitude: MagnitudeConfig,
    pub early_stopping: EarlyStopping,
    /// Where trajectories are written; `None` keeps them in memory.
    pub trajectory_dir: Option<PathBuf>,
    pub retain_trajectories: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schedule: PruneSchedule::default(),
            train_optimizer: OptimizerConfig::sgd(5e-4),
            prune_optimizer: OptimizerConfig::sgd(1e-3),
            batch_size: 512,
            probe: ProbeMode::Minibatch,
            probe_size: 512,
            precision: SnapshotPrecision::F32,
            lasso: LassoConfig::default(),
            magnitude: MagnitudeConfig::default(),
            early_stopping: EarlyStopping::default(),
            trajectory_dir: None,
            retain_trajectories: false,
        }
    }
}

impl RunConfig {
    pub fn delta_mode(&self) -> DeltaMode {
        if self.prune_optimizer.beta > 0.0 {
            DeltaMode::Momentum
        } else {
            DeltaMode::Vanilla
        }
    }

    pub fn validate(&self, method: PruneMethod) -> Result<()> {
        self.schedule.validate(method)?;
        self.train_optimizer.validate()?;
        self.prune_optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.probe == ProbeMode::Fixed && self.probe_size == 0 {
            return Err(Error::Config("probe_size must be >= 1 in fixed-probe mode".into()));
        }
        match method {
            PruneMethod::Causal => self.lasso.validate(),
            PruneMethod::Magnitude => self.magnitude.validate(),
            PruneMethod::None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pruned: usize,
    pub prunable: usize,
    pub percent_pruned: f64,
    /// Validation accuracy at the end of this iteration's training epochs,
    /// before the new mask is applied.
    pub val_accuracy: f64,
    pub trajectory_steps: usize,
    pub lasso_objective: Option<f64>,
    pub lasso_l1: Option<f64>,
    pub lasso_epochs: Option<usize>,
    pub lasso_kkt_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub method: PruneMethod,
    pub seed: u64,
    pub spec_hash: String,
    pub iterations: Vec<IterationRecord>,
    pub final_mask: PruneMask,
    /// Post-pretraining checkpoint every iteration rewinds to.
    pub theta_pre: Vec<f64>,
    /// Selected post-training parameters (pruned coordinates are zero).
    pub final_params: Vec<f64>,
    pub pretrain_val_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub post_epochs: usize,
    /// False for the partial report of an aborted run.
    pub completed: bool,
    /// Trajectory files kept on disk.
    pub retained_trajectories: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    spec_hash: &'a str,
    method: String,
    seed: u64,
    completed: bool,
    iterations: usize,
    percent_pruned: f64,
    pruned: usize,
    prunable: usize,
    pretrain_val_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    post_epochs: usize,
}

impl RunReport {
    pub fn percent_pruned(&self) -> f64 {
        self.final_mask.percent_pruned()
    }

    /// True when the pruned percentage never decreases across iterations.
    pub fn is_monotone(&self) -> bool {
        self.iterations.windows(2).all(|w| w[0].pruned <= w[1].pruned)
    }

    /// One row per iteration.
    pub fn write_iterations_csv(&self, w: impl Write, config_hash: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "config_hash",
            "method",
            "seed",
            "iteration",
            "pruned",
            "prunable",
            "percent_pruned",
            "val_accuracy",
            "trajectory_steps",
            "lasso_objective",
            "lasso_l1",
            "lasso_epochs",
            "lasso_kkt_max",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.iterations {
            out.write_record([
                config_hash.to_string(),
                self.method.to_string(),
                self.seed.to_string(),
                r.iteration.to_string(),
                r.pruned.to_string(),
                r.prunable.to_string(),
                format!("{:.6}", r.percent_pruned),
                format!("{:.6}", r.val_accuracy),
                r.trajectory_steps.to_string(),
                opt(r.lasso_objective),
                opt(r.lasso_l1),
                r.lasso_epochs.map(|e| e.to_string()).unwrap_or_default(),
                opt(r.lasso_kkt_max),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Run-level summary as TOML.
    pub fn summary_toml(&self, config_hash: &str) -> String {
        let s = Summary {
            config_hash,
            spec_hash: &self.spec_hash,
            method: self.method.to_string(),
            seed: self.seed,
            completed: self.completed,
            iterations: self.iterations.len(),
            percent_pruned: self.percent_pruned(),
            pruned: self.final_mask.pruned_count(),
            prunable: self.final_mask.prunable_count(),
            pretrain_val_accuracy: self.pretrain_val_accuracy,
            val_accuracy: self.val_accuracy,
            test_accuracy: self.test_accuracy,
            post_epochs: self.post_epochs,
        };
        toml::to_string(&s).unwrap_or_default()
    }
}

/// Kept coordinates take their `theta_pre` value, pruned ones are zero.
pub fn rewind(theta_pre: &[f64], mask: &PruneMask) -> Vec<f64> {
    let mut p = theta_pre.to_vec();
    mask.apply(&mut p);
    p
}

/// Hex SHA-256 prefix of a model spec, used to tie artifacts to their model.
pub fn spec_hash(spec: &ModelSpec) -> String {
    crate::config::digest(&toml::to_string(spec).unwrap_or_default())
}

pub fn causal_prune_run(spec: &ModelSpec, data: &Dataset, cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run(spec, data, cfg, seed, PruneMethod::Causal)
}

pub fn magnitude_prune_run(spec: &ModelSpec, data: &Dataset, cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run(spec, data, cfg, seed, PruneMethod::Magnitude)
}

/// The unpruned baseline: pretraining followed directly by post-training.
pub fn unpruned_run(spec: &ModelSpec, data: &Dataset, cfg: &RunConfig, seed: u64) -> Result<RunReport> {
    run(spec, data, cfg, seed, PruneMethod::None)
}

pub fn run(spec: &ModelSpec, data: &Dataset, cfg: &RunConfig, seed: u64, method: PruneMethod) -> Result<RunReport> {
    cfg.validate(method)?;
    if data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0 {
        return Err(Error::Config("dataset splits must be non-empty".into()));
    }
    let net = Network::new(spec)?;
    if net.input_len() != data.input_len() {
        return Err(Error::Shape(format!(
            "model expects {} inputs, dataset provides {}",
            net.input_len(),
            data.input_len()
        )));
    }
    let hash = spec_hash(spec);
    let mut params = build_model(spec, seed)?.values;
    let mut mask = PruneMask::all_kept(net.layer_map());

    let mut opt = Optimizer::new(cfg.train_optimizer, params.len())?;
    let pre_seed = phase_seed(seed, PHASE_PRE);
    for e in 0..cfg.schedule.n_pre {
        train_epoch(&net, &mut params, &mask, &mut opt, &data.train, cfg.batch_size, pre_seed, e as u64, None)?;
    }
    let theta_pre = params.clone();

    let mut report = RunReport {
        method,
        seed,
        spec_hash: hash,
        iterations: Vec::new(),
        final_mask: mask.clone(),
        theta_pre: theta_pre.clone(),
        final_params: theta_pre.clone(),
        pretrain_val_accuracy: net.accuracy(&theta_pre, &data.val)?,
        val_accuracy: f64::NAN,
        test_accuracy: f64::NAN,
        post_epochs: 0,
        completed: false,
        retained_trajectories: Vec::new(),
    };

    if method != PruneMethod::None {
        let probe = data.train.head(cfg.probe_size.min(data.train.size()));
        for i in 1..=cfg.schedule.n_iter {
            // Causal pruning ends once nothing is left to test; the magnitude
            // schedule treats running dry as an error.
            if method == PruneMethod::Causal && i > 1 && mask.kept_prunable().is_empty() {
                break;
            }
            match iterate(&net, data, cfg, seed, method, i, &theta_pre, &mask, &probe, &report.spec_hash) {
                Ok((next, record, kept_file)) => {
                    mask = next;
                    report.iterations.push(record);
                    report.retained_trajectories.extend(kept_file);
                    report.final_mask = mask.clone();
                }
                Err(e) => {
                    report.final_params = rewind(&theta_pre, &mask);
                    return Err(Error::RunAborted {
                        iteration: i,
                        source: Box::new(e),
                        partial: Box::new(report),
                    });
                }
            }
        }
    }

    let start = rewind(&theta_pre, &mask);
    let mut opt = Optimizer::new(cfg.train_optimizer, start.len())?;
    let post = train_with_selection(
        &net,
        start,
        &mask,
        &mut opt,
        &data.train,
        &data.val,
        &data.test,
        cfg.batch_size,
        phase_seed(seed, PHASE_POST),
        cfg.schedule.n_post,
        &cfg.early_stopping,
    )?;
    report.final_params = post.params;
    report.val_accuracy = post.val_accuracy;
    report.test_accuracy = post.test_accuracy;
    report.post_epochs = post.epochs_run;
    report.completed = true;
    Ok(report)
}

/// One train / select step starting from the rewound weights.
#[allow(clippy::too_many_arguments)]
fn iterate(
    net: &Network,
    data: &Dataset,
    cfg: &RunConfig,
    seed: u64,
    method: PruneMethod,
    i: usize,
    theta_pre: &[f64],
    mask: &PruneMask,
    probe: &crate::model::Batch,
    spec_hash: &str,
) -> Result<(PruneMask, IterationRecord, Option<PathBuf>)> {
    if mask.kept_prunable().is_empty() {
        return Err(Error::Mask(format!(
            "every prunable weight is already pruned before iteration {i}"
        )));
    }
    let mut params = rewind(theta_pre, mask);
    let mut opt = Optimizer::new(cfg.prune_optimizer, params.len())?;
    let shuffle = phase_seed(seed, PHASE_PRUNE + i as u64);

    let mut record = IterationRecord {
        iteration: i,
        pruned: 0,
        prunable: mask.prunable_count(),
        percent_pruned: 0.0,
        val_accuracy: 0.0,
        trajectory_steps: 0,
        lasso_objective: None,
        lasso_l1: None,
        lasso_epochs: None,
        lasso_kkt_max: None,
    };
    let mut kept_file = None;

    let next = match method {
        PruneMethod::Causal => {
            let meta = TrajectoryMeta {
                spec_hash: spec_hash.to_string(),
                optimizer: cfg.prune_optimizer,
                seed,
                probe: cfg.probe,
                precision: cfg.precision,
            };
            let mut traj = match &cfg.trajectory_dir {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join(format!("trajectory_seed{seed}_iter{i}.gctj"));
                    Trajectory::create(path, meta, params.len())?
                }
                None => Trajectory::in_memory(meta),
            };
            {
                let mut rec = Recording::new(&mut traj, Some(probe));
                for e in 0..cfg.schedule.n_prune {
                    train_epoch(net, &mut params, mask, &mut opt, &data.train, cfg.batch_size, shuffle, e as u64, Some(&mut rec))?;
                }
            }
            record.trajectory_steps = traj.len();
            let deltas = build_deltas(&traj, mask, cfg.delta_mode())?;
            if cfg.retain_trajectories {
                kept_file = traj.path().map(|p| p.to_path_buf());
            } else {
                traj.delete_files()?;
            }
            drop(traj);
            let fit = fit_dataset(&deltas, &cfg.lasso)?;
            record.lasso_objective = Some(fit.objective());
            record.lasso_l1 = Some(fit.l1_norm());
            record.lasso_epochs = Some(fit.total_epochs());
            record.lasso_kkt_max = Some(fit.max_kkt());
            extract_mask(&fit, mask, i as u32)?
        }
        PruneMethod::Magnitude => {
            for e in 0..cfg.schedule.n_prune {
                train_epoch(net, &mut params, mask, &mut opt, &data.train, cfg.batch_size, shuffle, e as u64, None)?;
            }
            magnitude_select(&params, mask, cfg.magnitude.mag_prune_frac, i as u32)?
        }
        PruneMethod::None => mask.clone(),
    };
    record.val_accuracy = net.accuracy(&params, &data.val)?;
    record.pruned = next.pruned_count();
    record.percent_pruned = next.percent_pruned();
    Ok((next, record, kept_file))
}
