use serde::{Deserialize, Serialize};

use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::mask::PruneMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// One feature `(Δθ_k^t)²` per parameter.
    #[default]
    Vanilla,
    /// Three features per parameter: `(Δθ^{t,0})²`, `(Δθ^{t,1})²` and
    /// `Δθ^{t,0}·Δθ^{t,1}`, with `Δθ^{t,0} = θᵗ − θᵗ⁻¹`, `Δθ^{t,1} = θᵗ⁻¹ − θᵗ⁻²`.
    Momentum,
}

impl DeltaMode {
    pub fn features_per_param(self) -> usize {
        match self {
            DeltaMode::Vanilla => 1,
            DeltaMode::Momentum => 3,
        }
    }
}

/// Regression design for one layer: column-major features, the shared loss
/// delta target, and the map from columns back to parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBlock {
    pub layer: String,
    /// Parameter index of each group of `features_per_param` columns.
    pub params: Vec<usize>,
    pub features_per_param: usize,
    pub rows: usize,
    features: Vec<f64>,
    pub target: Vec<f64>,
    dead: Vec<bool>,
}

impl LayerBlock {
    /// `features` is column-major: column `j` occupies `j*rows..(j+1)*rows`.
    pub fn new(
        layer: impl Into<String>,
        params: Vec<usize>,
        features_per_param: usize,
        features: Vec<f64>,
        target: Vec<f64>,
    ) -> Result<Self> {
        let rows = target.len();
        let cols = params.len() * features_per_param;
        if features_per_param == 0 || features.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} feature values for {rows} rows × {cols} columns",
                features.len()
            )));
        }
        if features.iter().chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("delta dataset".into()));
        }
        let dead = (0..cols)
            .map(|j| features[j * rows..(j + 1) * rows].iter().all(|&v| v == 0.0))
            .collect();
        Ok(LayerBlock {
            layer: layer.into(),
            params,
            features_per_param,
            rows,
            features,
            target,
            dead,
        })
    }

    /// Builds a block from row-major data, one parameter per column.
    pub fn from_rows(layer: impl Into<String>, rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != target.len() || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged design matrix".into()));
        }
        let mut features = vec![0.0; rows.len() * cols];
        for (t, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                features[j * rows.len() + t] = v;
            }
        }
        LayerBlock::new(layer, (0..cols).collect(), 1, features, target)
    }

    pub fn cols(&self) -> usize {
        self.params.len() * self.features_per_param
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.features[j * self.rows..(j + 1) * self.rows]
    }

    pub fn is_dead(&self, j: usize) -> bool {
        self.dead[j]
    }

    pub fn dead_columns(&self) -> Vec<usize> {
        (0..self.cols()).filter(|&j| self.dead[j]).collect()
    }

    pub fn param_of(&self, j: usize) -> usize {
        self.params[j / self.features_per_param]
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.features[j * self.rows + t]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaDataset {
    pub mode: DeltaMode,
    pub rows: usize,
    pub blocks: Vec<LayerBlock>,
}

impl DeltaDataset {
    pub fn block(&self, layer: &str) -> Option<&LayerBlock> {
        self.blocks.iter().find(|b| b.layer == layer)
    }
}

fn check(traj: &Trajectory, mask: &PruneMask, min_steps: usize) -> Result<()> {
    if traj.len() < min_steps {
        return Err(Error::Trajectory(format!(
            "need at least {min_steps} recorded steps, have {}",
            traj.len()
        )));
    }
    let n = traj.records()[0].params.len();
    if n != mask.len() {
        return Err(Error::Shape(format!(
            "trajectory of {n} parameters with a mask of {}",
            mask.len()
        )));
    }
    Ok(())
}

/// Per prunable layer, features `(θᵗ_k − θᵗ⁻¹_k)²` for kept `k` and target
/// `Lᵗ − Lᵗ⁻¹`, for `t = 1..T`.
pub fn build_vanilla_deltas(traj: &Trajectory, mask: &PruneMask) -> Result<DeltaDataset> {
    check(traj, mask, 2)?;
    let recs = traj.records();
    let rows = recs.len() - 1;
    let target: Vec<f64> = recs.windows(2).map(|w| w[1].loss - w[0].loss).collect();
    let mut blocks = Vec::new();
    for layer in mask.layer_map().prunable_layers() {
        let params: Vec<usize> = layer.range().filter(|&k| mask.is_kept(k)).collect();
        if params.is_empty() {
            continue;
        }
        let mut features = Vec::with_capacity(params.len() * rows);
        for &k in &params {
            features.extend(recs.windows(2).map(|w| {
                let d = w[1].params[k] - w[0].params[k];
                d * d
            }));
        }
        blocks.push(LayerBlock::new(&layer.name, params, 1, features, target.clone())?);
    }
    Ok(DeltaDataset {
        mode: DeltaMode::Vanilla,
        rows,
        blocks,
    })
}

/// Momentum-model design for `t = 2..T`: three columns per kept parameter.
pub fn build_momentum_deltas(traj: &Trajectory, mask: &PruneMask) -> Result<DeltaDataset> {
    check(traj, mask, 3)?;
    let recs = traj.records();
    let rows = recs.len() - 2;
    let target: Vec<f64> = recs.windows(3).map(|w| w[2].loss - w[1].loss).collect();
    let mut blocks = Vec::new();
    for layer in mask.layer_map().prunable_layers() {
        let params: Vec<usize> = layer.range().filter(|&k| mask.is_kept(k)).collect();
        if params.is_empty() {
            continue;
        }
        let mut features = Vec::with_capacity(3 * params.len() * rows);
        for &k in &params {
            let d0 = |w: &[_]| delta(w, 2, k);
            let d1 = |w: &[_]| delta(w, 1, k);
            features.extend(recs.windows(3).map(|w| d0(w) * d0(w)));
            features.extend(recs.windows(3).map(|w| d1(w) * d1(w)));
            features.extend(recs.windows(3).map(|w| d0(w) * d1(w)));
        }
        blocks.push(LayerBlock::new(&layer.name, params, 3, features, target.clone())?);
    }
    Ok(DeltaDataset {
        mode: DeltaMode::Momentum,
        rows,
        blocks,
    })
}

fn delta(w: &[super::trajectory::StepRecord], i: usize, k: usize) -> f64 {
    w[i].params[k] - w[i - 1].params[k]
}

pub fn build_deltas(traj: &Trajectory, mask: &PruneMask, mode: DeltaMode) -> Result<DeltaDataset> {
    match mode {
        DeltaMode::Vanilla => build_vanilla_deltas(traj, mask),
        DeltaMode::Momentum => build_momentum_deltas(traj, mask),
    }
}
