//! Browser front end for `causal-prune`.
//!
//! A small MLP is trained on two Gaussian blobs when the page loads and one
//! pruning-phase trajectory is recorded. The page then drives three
//! operations on that state: the phase-shift curve (percent pruned against
//! the L1 coefficient, refitted on the recorded deltas), the filter-normalized
//! loss landscape of the pruned subnetwork, and its top Hessian eigenvalues.
//! Every operation returns JSON.
//!
//! The `*_json` methods are plain Rust and usable off the browser; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use causal_prune::data::{synth_blobs, Dataset};
use causal_prune::flatness::{landscape_grid, top_eigenvalues, FlatnessConfig, Scaling};
use causal_prune::lasso::{extract_mask, fit_dataset, null_alpha, LassoConfig};
use causal_prune::mask::PruneMask;
use causal_prune::model::{build_model, Activation, Batch, LossKind, ModelSpec, Network};
use causal_prune::optim::{Optimizer, OptimizerConfig};
use causal_prune::prune::replay_sweep;
use causal_prune::recorder::{
    build_vanilla_deltas, DeltaDataset, ProbeMode, SnapshotPrecision, Trajectory, TrajectoryMeta,
};
use causal_prune::train::{phase_seed, train_epoch, Recording};

const BATCH: usize = 32;
const PRE_EPOCHS: u64 = 5;
const PRUNE_EPOCHS: u64 = 3;
const LR: f64 = 0.05;

/// Trained network, its recorded deltas and the data it was trained on.
pub struct State {
    net: Network,
    data: Dataset,
    params: Vec<f64>,
    deltas: DeltaDataset,
    prior: PruneMask,
    /// Largest per-layer α below which anything survives.
    alpha_max: f64,
    eval: Vec<Batch>,
}

#[derive(Serialize)]
struct Summary {
    params: usize,
    prunable: usize,
    trajectory_rows: usize,
    alpha_max: f64,
    val_accuracy: f64,
}

#[derive(Serialize)]
struct CurvePoint {
    log_ratio: f64,
    alpha: f64,
    percent_pruned: f64,
    l1_norm: f64,
}

#[derive(Serialize)]
struct Landscape {
    resolution: usize,
    coords: Vec<f64>,
    values: Vec<f64>,
    center: f64,
    percent_pruned: f64,
}

#[derive(Serialize)]
struct Spectrum {
    eigenvalues: Vec<f64>,
    iterations: Vec<usize>,
    free_params: usize,
    percent_pruned: f64,
}

fn err(e: causal_prune::Error) -> String {
    e.to_string()
}

fn json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

impl State {
    /// Trains a `2-hidden-hidden-2` ReLU network from `seed`.
    pub fn train(seed: u64, hidden: usize) -> Result<Self, String> {
        if hidden == 0 || hidden > 64 {
            return Err(format!("hidden width must lie in 1..=64, got {hidden}"));
        }
        let data = synth_blobs(2, 2, 200, 3.0, seed).map_err(err)?;
        let spec = ModelSpec::mlp(&[2, hidden, hidden, 2], Activation::Relu, LossKind::CrossEntropy);
        let net = Network::new(&spec).map_err(err)?;
        let mut params = build_model(&spec, seed).map_err(err)?.values;
        let full = PruneMask::all_kept(net.layer_map());
        let opt_cfg = OptimizerConfig::sgd(LR);
        let mut opt = Optimizer::new(opt_cfg, params.len()).map_err(err)?;
        for e in 0..PRE_EPOCHS {
            train_epoch(&net, &mut params, &full, &mut opt, &data.train, BATCH, phase_seed(seed, 1), e, None)
                .map_err(err)?;
        }
        let probe = data.train.head(data.train.size().min(256));
        let mut traj = Trajectory::in_memory(TrajectoryMeta {
            spec_hash: String::new(),
            optimizer: opt_cfg,
            seed,
            probe: ProbeMode::Fixed,
            precision: SnapshotPrecision::F64,
        });
        let mut trained = params.clone();
        let mut opt = Optimizer::new(opt_cfg, params.len()).map_err(err)?;
        {
            let mut rec = Recording::new(&mut traj, Some(&probe));
            for e in 0..PRUNE_EPOCHS {
                train_epoch(
                    &net,
                    &mut trained,
                    &full,
                    &mut opt,
                    &data.train,
                    BATCH,
                    phase_seed(seed, 1000),
                    e,
                    Some(&mut rec),
                )
                .map_err(err)?;
            }
        }
        let deltas = build_vanilla_deltas(&traj, &full).map_err(err)?;
        let alpha_max = deltas.blocks.iter().map(null_alpha).fold(0.0, f64::max);
        let eval = vec![data.train.head(data.train.size().min(256))];
        Ok(State {
            net,
            data,
            params: trained,
            deltas,
            prior: full,
            alpha_max,
            eval,
        })
    }

    fn alpha(&self, log_ratio: f64) -> f64 {
        self.alpha_max * 10f64.powf(log_ratio)
    }

    /// Mask from the lasso at `α = alpha_max · 10^log_ratio`; a ratio of
    /// `-inf` keeps everything.
    fn mask_at(&self, log_ratio: f64) -> Result<PruneMask, String> {
        if log_ratio == f64::NEG_INFINITY {
            return Ok(self.prior.clone());
        }
        let fit = fit_dataset(&self.deltas, &LassoConfig::with_alpha(self.alpha(log_ratio))).map_err(err)?;
        extract_mask(&fit, &self.prior, 1).map_err(err)
    }

    pub fn summary_json(&self) -> Result<String, String> {
        json(&Summary {
            params: self.params.len(),
            prunable: self.prior.prunable_count(),
            trajectory_rows: self.deltas.rows,
            alpha_max: self.alpha_max,
            val_accuracy: self.net.accuracy(&self.params, &self.data.val).map_err(err)?,
        })
    }

    /// Percent pruned at `points` log-spaced ratios `α / alpha_max` in
    /// `[10^lo, 10^hi]`.
    pub fn phase_shift_json(&self, lo: f64, hi: f64, points: usize) -> Result<String, String> {
        if points < 2 || !(lo < hi) {
            return Err("need at least two points and lo < hi".into());
        }
        let ratios: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let alphas: Vec<f64> = ratios.iter().map(|&r| self.alpha(r)).collect();
        let pts = replay_sweep(&self.deltas, &self.prior, &LassoConfig::with_alpha(0.0), &alphas).map_err(err)?;
        let prunable = self.prior.prunable_count() as f64;
        let curve: Vec<CurvePoint> = pts
            .iter()
            .zip(&ratios)
            .map(|(p, &r)| CurvePoint {
                log_ratio: r,
                alpha: p.alpha,
                percent_pruned: 100.0 * p.pruned as f64 / prunable,
                l1_norm: p.l1_norm,
            })
            .collect();
        json(&curve)
    }

    /// Loss surface around the network pruned at `log_ratio`.
    pub fn landscape_json(&self, log_ratio: f64, resolution: usize, log1p: bool) -> Result<String, String> {
        if resolution > 61 {
            return Err(format!("resolution {resolution} is too large for the page (max 61)"));
        }
        let mask = self.mask_at(log_ratio)?;
        let scaling = if log1p { Scaling::Log1p } else { Scaling::Raw };
        let grid = landscape_grid(
            &self.net,
            &self.params,
            self.net.layer_map(),
            Some(&mask),
            &self.eval,
            resolution,
            [1, 2],
            scaling,
        )
        .map_err(err)?;
        json(&Landscape {
            resolution,
            center: grid.center(),
            coords: grid.coords,
            values: grid.values,
            percent_pruned: mask.percent_pruned(),
        })
    }

    /// Leading `k` Hessian eigenvalues of the network pruned at `log_ratio`.
    pub fn spectrum_json(&self, log_ratio: f64, k: usize) -> Result<String, String> {
        let mask = self.mask_at(log_ratio)?;
        let cfg = FlatnessConfig {
            k,
            tol: 1e-8,
            max_iter: 2000,
            ..FlatnessConfig::default()
        };
        let r = top_eigenvalues(&self.net, &self.params, &self.eval, Some(&mask), &cfg).map_err(err)?;
        json(&Spectrum {
            eigenvalues: r.eigenvalues,
            iterations: r.iterations,
            free_params: r.free_params,
            percent_pruned: mask.percent_pruned(),
        })
    }
}

/// Handle exported to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    state: State,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, hidden: u32) -> Result<Demo, JsError> {
        let state = State::train(seed as u64, hidden as usize).map_err(|e| JsError::new(&e))?;
        Ok(Demo { state })
    }

    pub fn summary(&self) -> Result<String, JsError> {
        self.state.summary_json().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = phaseShift)]
    pub fn phase_shift(&self, lo: f64, hi: f64, points: u32) -> Result<String, JsError> {
        self.state
            .phase_shift_json(lo, hi, points as usize)
            .map_err(|e| JsError::new(&e))
    }

    pub fn landscape(&self, log_ratio: f64, resolution: u32, log1p: bool) -> Result<String, JsError> {
        self.state
            .landscape_json(log_ratio, resolution as usize, log1p)
            .map_err(|e| JsError::new(&e))
    }

    pub fn spectrum(&self, log_ratio: f64, k: u32) -> Result<String, JsError> {
        self.state.spectrum_json(log_ratio, k as usize).map_err(|e| JsError::new(&e))
    }
}
