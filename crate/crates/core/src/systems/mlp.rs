//! Feedforward policies loaded from JSON.
//!
//! File layout:
//!
//! ```json
//! {"input_dim": 2,
//!  "layers": [{"weights": [[...], ...], "bias": [...], "activation": "tanh"}],
//!  "saturation": 0.7}
//! ```
//!
//! `weights` is row-major with one row per output unit. `saturation` clamps
//! every output to `[-s, s]` after the last layer, or is `null`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative at `z`. ReLU takes the subgradient 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: State,
    pub activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
    saturation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct MlpPolicy {
    layers: Vec<Layer>,
    input_dim: usize,
    saturation: Option<f64>,
}

impl TryFrom<PolicyFile> for MlpPolicy {
    type Error = Error;

    fn try_from(file: PolicyFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, Vec::len);
            if l.weights.iter().any(|r| r.len() != cols) {
                return Err(Error::Policy(format!("layer {i}: ragged weight rows")));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            layers.push(Layer {
                weights: DMatrix::from_row_slice(rows, cols, &flat),
                bias: State::from_vec(l.bias),
                activation: l.activation,
            });
        }
        MlpPolicy::new(file.input_dim, layers, file.saturation)
    }
}

impl From<MlpPolicy> for PolicyFile {
    fn from(p: MlpPolicy) -> Self {
        PolicyFile {
            input_dim: p.input_dim,
            layers: p
                .layers
                .into_iter()
                .map(|l| LayerFile {
                    weights: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    bias: l.bias.iter().copied().collect(),
                    activation: l.activation,
                })
                .collect(),
            saturation: p.saturation,
        }
    }
}

impl MlpPolicy {
    pub fn new(input_dim: usize, layers: Vec<Layer>, saturation: Option<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Policy("policy has no layers".into()));
        }
        let mut width = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != width {
                return Err(Error::Policy(format!(
                    "layer {i}: expects {} inputs but previous width is {width}",
                    l.weights.ncols()
                )));
            }
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Policy(format!(
                    "layer {i}: bias length {} != {} rows",
                    l.bias.len(),
                    l.weights.nrows()
                )));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Policy(format!("layer {i}: non-finite parameter")));
            }
            width = l.weights.nrows();
        }
        if let Some(s) = saturation {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Policy(format!("saturation must be > 0, got {s}")));
            }
        }
        Ok(Self { layers, input_dim, saturation })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn saturation(&self) -> Option<f64> {
        self.saturation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check(&self, input: &State) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: input.len() });
        }
        Ok(())
    }

    pub fn forward(&self, input: &State) -> Result<State> {
        self.check(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &State) -> State {
        let mut h = input.clone();
        for l in &self.layers {
            let z = &l.weights * &h + &l.bias;
            h = z.map(|v| l.activation.apply(v));
        }
        if let Some(s) = self.saturation {
            h.apply(|v| *v = v.clamp(-s, s));
        }
        h
    }

    /// Back-propagates an output cotangent to the input.
    pub fn vjp(&self, input: &State, cotangent: &State) -> Result<State> {
        self.check(input)?;
        if cotangent.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: cotangent.len() });
        }
        Ok(self.vjp_unchecked(input, cotangent))
    }

    pub(crate) fn vjp_unchecked(&self, input: &State, cotangent: &State) -> State {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for l in &self.layers {
            let z = &l.weights * &h + &l.bias;
            h = z.map(|v| l.activation.apply(v));
            pre.push(z);
        }
        let mut g = cotangent.clone();
        if let Some(s) = self.saturation {
            g.zip_apply(&h, |gi, hi| {
                if hi.abs() >= s {
                    *gi = 0.0;
                }
            });
        }
        for (l, z) in self.layers.iter().zip(pre.iter()).rev() {
            g.zip_apply(z, |gi, zi| *gi *= l.activation.derivative(zi));
            g = l.weights.tr_mul(&g);
        }
        g
    }

    /// A one-hidden-layer tanh network whose linearization at the origin is
    /// the state feedback `u = -K x`.
    ///
    /// Hidden weights are drawn from `N(0, scale²)` with a fixed seed; the
    /// output layer is the minimum-norm solution of `W₂W₁ = -K`, so the
    /// network matches the linear gain near the origin and bends away from it
    /// as the hidden units saturate.
    pub fn tanh_from_gain(gain: &DMatrix<f64>, hidden: usize, scale: f64, seed: u64) -> Result<Self> {
        let (outputs, inputs) = gain.shape();
        if hidden < inputs {
            return Err(Error::Policy(format!("need at least {inputs} hidden units, got {hidden}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Policy(e.to_string()))?;
        let w1 = DMatrix::from_fn(hidden, inputs, |_, _| normal.sample(&mut rng));
        let gram = w1.transpose() * &w1;
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Policy("hidden weights are rank deficient".into()))?;
        let w2 = -(gain * gram_inv * w1.transpose());
        Self::new(
            inputs,
            vec![
                Layer { weights: w1, bias: State::zeros(hidden), activation: Activation::Tanh },
                Layer { weights: w2, bias: State::zeros(outputs), activation: Activation::Linear },
            ],
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> State {
        State::from_column_slice(xs)
    }

    fn single(weights: DMatrix<f64>, activation: Activation) -> MlpPolicy {
        let n = weights.nrows();
        let m = weights.ncols();
        MlpPolicy::new(m, vec![Layer { weights, bias: State::zeros(n), activation }], None).unwrap()
    }

    #[test]
    fn identity_network() {
        let p = single(DMatrix::identity(3, 3), Activation::Linear);
        assert_eq!(p.forward(&v(&[1.0, -2.0, 3.0])).unwrap(), v(&[1.0, -2.0, 3.0]));
    }

    #[test]
    fn relu_layer() {
        let p = single(DMatrix::identity(2, 2), Activation::Relu);
        assert_eq!(p.forward(&v(&[-1.0, 2.0])).unwrap(), v(&[0.0, 2.0]));
    }

    #[test]
    fn saturation_clamps_and_blocks_gradient() {
        let mut p = single(DMatrix::from_row_slice(1, 1, &[3.0]), Activation::Linear);
        p.saturation = Some(1.0);
        assert_eq!(p.forward(&v(&[2.0])).unwrap(), v(&[1.0]));
        assert_eq!(p.vjp(&v(&[2.0]), &v(&[1.0])).unwrap(), v(&[0.0]));
        assert_eq!(p.vjp(&v(&[0.1]), &v(&[1.0])).unwrap(), v(&[3.0]));
    }

    #[test]
    fn dimension_mismatch() {
        let p = single(DMatrix::identity(2, 2), Activation::Linear);
        assert!(matches!(p.forward(&v(&[1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_broken_chains() {
        let l1 = Layer {
            weights: DMatrix::zeros(4, 2),
            bias: State::zeros(4),
            activation: Activation::Tanh,
        };
        let l2 = Layer {
            weights: DMatrix::zeros(1, 3),
            bias: State::zeros(1),
            activation: Activation::Linear,
        };
        assert!(MlpPolicy::new(2, vec![l1, l2], None).is_err());
        let l = Layer {
            weights: DMatrix::zeros(1, 2),
            bias: State::zeros(1),
            activation: Activation::Linear,
        };
        assert!(MlpPolicy::new(2, vec![l], Some(-1.0)).is_err());
    }

    #[test]
    fn json_layout() {
        let text = r#"{"input_dim": 2,
            "layers": [{"weights": [[1.0, 2.0], [0.0, -1.0]], "bias": [0.5, 0.0], "activation": "relu"},
                       {"weights": [[1.0, 1.0]], "bias": [0.0], "activation": "linear"}],
            "saturation": null}"#;
        let p: MlpPolicy = serde_json::from_str(text).unwrap();
        assert_eq!(p.output_dim(), 1);
        // hidden = relu((1 + 2*1 + 0.5, -1)) = (3.5, 0)
        assert_eq!(p.forward(&v(&[1.0, 1.0])).unwrap(), v(&[3.5]));
        let back: MlpPolicy = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let ragged = r#"{"input_dim": 2, "layers": [{"weights": [[1.0], [1.0, 2.0]], "bias": [0, 0], "activation": "relu"}], "saturation": null}"#;
        assert!(serde_json::from_str::<MlpPolicy>(ragged).is_err());
    }

    #[test]
    fn tanh_from_gain_linearizes_to_gain() {
        let k = DMatrix::from_row_slice(1, 2, &[1.5, 0.4]);
        let p = MlpPolicy::tanh_from_gain(&k, 16, 0.3, 3).unwrap();
        let jac = p.vjp(&v(&[0.0, 0.0]), &v(&[1.0])).unwrap();
        assert_relative_eq!(jac, v(&[-1.5, -0.4]), epsilon = 1e-12);
    }
}
