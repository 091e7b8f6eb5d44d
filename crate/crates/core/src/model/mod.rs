//! Small differentiable models over a flat parameter vector.
//!
//! A [`ModelSpec`] describes a feed-forward stack (dense, convolution,
//! pooling, activations); [`Network`] compiles it into an executable plan
//! with exact backpropagated gradients. Anything implementing [`Objective`]
//! can be trained, recorded and probed for curvature, which lets the toy
//! linear and quadratic losses share the same machinery as real networks.

mod batch;
mod network;
mod objective;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batch::{Batch, Targets};
pub use network::Network;
pub use objective::{LinearObjective, Objective, QuadraticObjective};
pub use params::{FlatParams, LayerMap, LayerSlice};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2d {
        size: usize,
    },
    Flatten,
    Activation {
        kind: Activation,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[features]` for vector inputs or `[channels, height, width]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub loss: LossKind,
}

impl ModelSpec {
    /// Fully-connected stack `widths[0] → widths[1] → …` with `activation`
    /// between consecutive dense layers.
    pub fn mlp(widths: &[usize], activation: Activation, loss: LossKind) -> Self {
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Activation { kind: activation });
            }
            layers.push(Layer::Dense {
                inputs: w[0],
                outputs: w[1],
            });
        }
        ModelSpec {
            input_shape: vec![widths.first().copied().unwrap_or(0)],
            layers,
            loss,
        }
    }

    /// LeNet-5 style convnet for `channels × side × side` images.
    pub fn lenet(channels: usize, side: usize, classes: usize, activation: Activation) -> Self {
        let act = Layer::Activation { kind: activation };
        let s1 = (side - 4) / 2;
        let s2 = (s1 - 4) / 2;
        ModelSpec {
            input_shape: vec![channels, side, side],
            layers: vec![
                Layer::Conv2d {
                    in_channels: channels,
                    out_channels: 6,
                    kernel: 5,
                },
                act.clone(),
                Layer::MaxPool2d { size: 2 },
                Layer::Conv2d {
                    in_channels: 6,
                    out_channels: 16,
                    kernel: 5,
                },
                act.clone(),
                Layer::MaxPool2d { size: 2 },
                Layer::Flatten,
                Layer::Dense {
                    inputs: 16 * s2 * s2,
                    outputs: 120,
                },
                act.clone(),
                Layer::Dense {
                    inputs: 120,
                    outputs: 84,
                },
                act,
                Layer::Dense {
                    inputs: 84,
                    outputs: classes,
                },
            ],
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Network::new(self).map(|_| ())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Deterministic fan-in scaled uniform initialization: every weight and bias
/// of a layer with fan-in `m` is drawn from `U(-1/√m, 1/√m)`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<FlatParams> {
    let net = Network::new(spec)?;
    let map = net.layer_map().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; map.total_len()];
    for e in &map.entries {
        let fan_in = net.fan_in(&e.name);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[e.range()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    FlatParams::new(values, map)
}

/// Mean loss over `batch` and its exact gradient.
pub fn loss_and_grad(params: &FlatParams, spec: &ModelSpec, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let net = Network::new(spec)?;
    net.loss_and_grad(&params.values, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn mlp_layer_map_counts() {
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Relu, LossKind::CrossEntropy);
        let p = build_model(&spec, 7).unwrap();
        let lens: Vec<_> = p
            .layer_map
            .entries
            .iter()
            .map(|e| (e.name.as_str(), e.len, e.prunable))
            .collect();
        assert_eq!(
            lens,
            vec![
                ("dense0.weight", 8, true),
                ("dense0.bias", 4, false),
                ("dense1.weight", 8, true),
                ("dense1.bias", 2, false)
            ]
        );
        assert_eq!(p.len(), 22);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Relu, LossKind::CrossEntropy);
        let a = build_model(&spec, 7).unwrap();
        let b = build_model(&spec, 7).unwrap();
        assert!(a
            .values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = build_model(&spec, 8).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = ModelSpec {
            input_shape: vec![3],
            layers: vec![
                Layer::Dense {
                    inputs: 3,
                    outputs: 4,
                },
                Layer::Dense {
                    inputs: 5,
                    outputs: 2,
                },
            ],
            loss: LossKind::CrossEntropy,
        };
        let err = build_model(&spec, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)), "{err}");
        assert!(err.to_string().contains("5"));
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = ModelSpec {
            input_shape: vec![3],
            layers: vec![],
            loss: LossKind::CrossEntropy,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn lenet_builds() {
        let spec = ModelSpec::lenet(1, 28, 10, Activation::Relu);
        let p = build_model(&spec, 1).unwrap();
        // conv 156 + 2416, dense 30840 + 10164 + 850
        assert_eq!(p.len(), 44426);
        let conv = p.layer_map.get("conv0.weight").unwrap();
        assert_eq!(conv.filter_shape, vec![6, 1, 5, 5]);
    }

    #[test]
    fn tensor_round_trip_is_identity() {
        let spec = ModelSpec::mlp(&[3, 5, 2], Activation::Tanh, LossKind::CrossEntropy);
        let p = build_model(&spec, 3).unwrap();
        let back = FlatParams::from_tensors(&p.to_tensors(), p.layer_map.clone()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = ModelSpec::lenet(1, 28, 10, Activation::Relu);
        let text = toml::to_string(&spec).unwrap();
        let back: ModelSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
