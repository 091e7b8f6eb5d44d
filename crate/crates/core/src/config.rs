//! Experiment configuration files.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "out"
//!
//! [model]
//! kind = "mlp"
//! widths = [2, 50, 50, 2]
//!
//! [data]
//! kind = "blobs"
//! per_class = 500
//!
//! [schedule]
//! n_pre = 5
//! n_iter = 10
//! n_prune = 10
//! n_post = 50
//!
//! [lasso]
//! l1_coeff = 1e-14
//!
//! [magnitude]
//! mag_prune_frac = 0.2
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx_dataset, synth_blobs, synth_dead_features, Dataset};
use crate::error::{Error, Result};
use crate::flatness::FlatnessConfig;
use crate::lasso::LassoConfig;
use crate::mask::PruneMethod;
use crate::model::{Activation, Layer, LossKind, ModelSpec};
use crate::optim::OptimizerConfig;
use crate::prune::{MagnitudeConfig, PruneSchedule, RunConfig};
use crate::recorder::{ProbeMode, SnapshotPrecision};
use crate::train::EarlyStopping;

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    digest_bytes(text.as_bytes())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let full = hex::encode(Sha256::digest(bytes));
    full[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        widths: Vec<usize>,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        loss: LossKind,
    },
    Lenet {
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "mnist_side")]
        side: usize,
        #[serde(default = "ten")]
        classes: usize,
        #[serde(default)]
        activation: Activation,
    },
    Custom {
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        #[serde(default)]
        loss: LossKind,
    },
}

fn one() -> usize {
    1
}
fn mnist_side() -> usize {
    28
}
fn ten() -> usize {
    10
}
fn two() -> usize {
    2
}
fn default_separation() -> f64 {
    3.0
}
fn default_val_fraction() -> f64 {
    0.1
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        match self {
            ModelConfig::Mlp {
                widths,
                activation,
                loss,
            } => ModelSpec::mlp(widths, *activation, *loss),
            ModelConfig::Lenet {
                channels,
                side,
                classes,
                activation,
            } => ModelSpec::lenet(*channels, *side, *classes, *activation),
            ModelConfig::Custom {
                input_shape,
                layers,
                loss,
            } => ModelSpec {
                input_shape: input_shape.clone(),
                layers: layers.clone(),
                loss: *loss,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs {
        #[serde(default = "two")]
        classes: usize,
        #[serde(default = "two")]
        dims: usize,
        per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    DeadFeatures {
        #[serde(default = "two")]
        live_dims: usize,
        dead_dims: usize,
        #[serde(default = "two")]
        classes: usize,
        per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DataConfig {
    /// Relative IDX paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DataConfig::Blobs {
                classes,
                dims,
                per_class,
                separation,
                seed,
            } => synth_blobs(*classes, *dims, *per_class, *separation, *seed),
            DataConfig::DeadFeatures {
                live_dims,
                dead_dims,
                classes,
                per_class,
                seed,
            } => synth_dead_features(*live_dims, *dead_dims, *classes, *per_class, *seed),
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                val_fraction,
                seed,
            } => load_idx_dataset(
                base.join(train_images),
                base.join(train_labels),
                base.join(test_images),
                base.join(test_labels),
                *val_fraction,
                *seed,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Learning rate of the pre- and post-training phases (plain SGD).
    pub lr: f64,
    /// Learning rate of the recorded pruning phase.
    pub prune_lr: f64,
    /// Momentum of the pruning phase; above zero selects the momentum model.
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let es = EarlyStopping::default();
        TrainingConfig {
            lr: 5e-4,
            prune_lr: 1e-3,
            momentum: 0.0,
            batch_size: 512,
            patience: es.patience,
            min_delta: es.min_delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecorderConfig {
    pub probe: ProbeMode,
    pub probe_size: usize,
    pub precision: SnapshotPrecision,
    /// Trajectory directory; defaults to `<output_dir>/trajectories`.
    pub trajectory_dir: Option<PathBuf>,
    pub in_memory: bool,
    pub retain_trajectories: bool,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig {
            probe: ProbeMode::Minibatch,
            probe_size: 512,
            precision: SnapshotPrecision::F32,
            trajectory_dir: None,
            in_memory: false,
            retain_trajectories: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: PruneSchedule,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub recorder: RecorderConfig,
    #[serde(default)]
    pub lasso: LassoConfig,
    #[serde(default)]
    pub magnitude: MagnitudeConfig,
    #[serde(default)]
    pub flatness: FlatnessConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub text: String,
    pub base_dir: PathBuf,
    pub hash: String,
}

/// 1-based line of the first `key = …` assignment, if any.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl LoadedConfig {
    pub fn parse(text: &str, source: &str, base_dir: &Path) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        Ok(LoadedConfig {
            config,
            source: source.to_string(),
            text: text.to_string(),
            base_dir: base_dir.to_path_buf(),
            hash: digest(text),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    fn anchored(&self, key: &str, msg: impl std::fmt::Display) -> Error {
        match key_line(&self.text, key) {
            Some(line) => Error::Config(format!("{}:{line}: {key}: {msg}", self.source)),
            None => Error::Config(format!("{}: {key}: {msg}", self.source)),
        }
    }

    /// Checks every sub-config that `method` depends on.
    pub fn validate(&self, method: PruneMethod) -> Result<()> {
        let c = &self.config;
        if c.seeds.is_empty() {
            return Err(self.anchored("seeds", "seed list must not be empty"));
        }
        if method != PruneMethod::None {
            if c.schedule.n_iter == 0 {
                return Err(self.anchored("n_iter", format!("must be >= 1 for a {method} run")));
            }
            if c.schedule.n_prune == 0 {
                return Err(self.anchored("n_prune", format!("must be >= 1 for a {method} run")));
            }
        }
        let t = &c.training;
        for (key, v) in [("lr", t.lr), ("prune_lr", t.prune_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(self.anchored(key, format!("learning rate must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(self.anchored("momentum", format!("must lie in [0, 1), got {}", t.momentum)));
        }
        if t.batch_size == 0 {
            return Err(self.anchored("batch_size", "must be >= 1"));
        }
        if method == PruneMethod::Causal {
            let l = &c.lasso;
            if !(l.alpha >= 0.0 && l.alpha.is_finite()) {
                return Err(self.anchored("l1_coeff", format!("must be >= 0, got {}", l.alpha)));
            }
            if !(l.tol > 0.0) || l.max_epochs == 0 {
                return Err(self.anchored("tol", "lasso tol and max_epochs must be positive"));
            }
        }
        if method == PruneMethod::Magnitude {
            let f = c.magnitude.mag_prune_frac;
            if !(f > 0.0 && f < 1.0) {
                return Err(self.anchored("mag_prune_frac", format!("must lie in (0, 1), got {f}")));
            }
        }
        if let Err(e) = c.flatness.validate() {
            return Err(self.anchored("resolution", e));
        }
        self.model_spec()?;
        self.run_config().validate(method)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = self.config.model.spec();
        spec.validate().map_err(|e| self.anchored("kind", e))?;
        Ok(spec)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.config.data.load(&self.base_dir)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output_dir)
    }

    pub fn run_config(&self) -> RunConfig {
        let c = &self.config;
        let t = &c.training;
        let trajectory_dir = if c.recorder.in_memory {
            None
        } else {
            Some(match &c.recorder.trajectory_dir {
                Some(d) => self.base_dir.join(d),
                None => self.output_dir().join("trajectories"),
            })
        };
        RunConfig {
            schedule: c.schedule,
            train_optimizer: OptimizerConfig::sgd(t.lr),
            prune_optimizer: OptimizerConfig::momentum(t.prune_lr, t.momentum),
            batch_size: t.batch_size,
            probe: c.recorder.probe,
            probe_size: c.recorder.probe_size,
            precision: c.recorder.precision,
            lasso: c.lasso.clone(),
            magnitude: c.magnitude,
            early_stopping: EarlyStopping {
                patience: t.patience,
                min_delta: t.min_delta,
            },
            trajectory_dir,
            retain_trajectories: c.recorder.retain_trajectories,
        }
    }
}
