//! Dense feed-forward networks with hand-derived backpropagation.
//!
//! Layers operate on row-major batches: an input of shape `(batch, in)` maps
//! to `(batch, out)`. Weights are stored `out x in`, matching the checkpoint
//! layout.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{parse_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{
    amount_ce_loss, positive_weight, positive_weights, triplet_retrieval_loss, wasserstein_loss,
    weighted_bce_loss, PositiveWeights, TripletLoss, BCE_CLAMP, DEFAULT_CE_EPS, DEFAULT_MARGIN,
    DEFAULT_WEIGHT_CLAMP,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Negative slope of hidden leaky ReLU layers.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Softmax,
    LeakyRelu(f64),
}

impl Activation {
    fn apply(&self, z: &mut Array2<f64>) {
        match *self {
            Activation::Identity => {}
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::LeakyRelu(slope) => z.mapv_inplace(|x| if x > 0.0 { x } else { slope * x }),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let total = row.sum();
                    row /= total;
                }
            }
        }
    }

    /// Turns `dL/d(output)` into `dL/d(pre-activation)` given the layer output.
    fn backprop(&self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match *self {
            Activation::Identity => {}
            Activation::Sigmoid => grad.zip_mut_with(output, |g, &s| *g *= s * (1.0 - s)),
            Activation::LeakyRelu(slope) => {
                grad.zip_mut_with(output, |g, &o| {
                    if o <= 0.0 {
                        *g *= slope
                    }
                })
            }
            Activation::Softmax => {
                for (mut g, s) in grad.rows_mut().into_iter().zip(output.rows()) {
                    let inner = g.dot(&s);
                    g.zip_mut_with(&s, |gi, &si| *gi = si * (*gi - inner));
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..=limit));
        Self {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameter-shaped gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k + 1]` is layer `k`'s output.
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    /// Number of optimizer steps applied so far.
    pub steps: u64,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("model has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::DimensionMismatch {
                    expected: l.outputs(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(Self { layers, steps: 0 })
    }

    /// Network with layer sizes `dims`, leaky ReLU on hidden layers and
    /// `output` on the last one.
    pub fn new<R: Rng>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer sizes {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { Activation::LeakyRelu(LEAKY_SLOPE) };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let input = activations.last().expect("nonempty");
            let mut z = input.dot(&layer.weights.t());
            z += &layer.bias.view().insert_axis(Axis(0));
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Output for a batch, without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.activations.pop().expect("nonempty"))
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.predict(view)?.into_raw_vec_and_offset().0)
    }

    /// Backpropagates `grad_output = dL/d(output)` through the network.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: Array2<f64>) -> (Gradients, Array2<f64>) {
        let mut grad = grad_output;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let output = &cache.activations[k + 1];
            let input = &cache.activations[k];
            layer.activation.backprop(output, &mut grad);
            let gw = grad.t().dot(input);
            let gb = grad.sum_axis(Axis(0));
            layers.push((gw, gb));
            grad = grad.dot(&layer.weights);
        }
        layers.reverse();
        (Gradients { layers }, grad)
    }
}
