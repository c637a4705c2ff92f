use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{GradTape, NodeId};
use super::Real;
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Affine layer `y = x W + b` with `W` stored `in × out` and `b` as a `1 × out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Real> {
    pub weight: Array2<T>,
    pub bias: Array2<T>,
}

/// Fully connected network with a shared hidden activation and linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, activation: Activation, rng: &mut R) -> Self {
        let dims = layer_dims(input, hidden, output);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((fan_in, fan_out), |_| T::lit(rng.random_range(-a..=a))),
                    bias: Array2::zeros((1, fan_out)),
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let dims = layer_dims(input, hidden, output);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array2::zeros((1, w[1])),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn from_layers(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.dim() != (1, layer.weight.ncols()) {
                return Err(Error::dimension(format!("bias of layer {i}"), layer.weight.ncols(), layer.bias.len()));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.nrows() != layer.weight.ncols() {
                    return Err(Error::dimension(format!("input of layer {}", i + 1), layer.weight.ncols(), next.weight.nrows()));
                }
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Widths of every layer boundary, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.ncols()))
            .collect()
    }

    /// Parameter tensors in a fixed order: `W₀, b₀, W₁, b₁, …`.
    pub fn tensors(&self) -> impl Iterator<Item = &Array2<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn forward(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        let rows = self.forward_rows(x.insert_axis(Axis(0)))?;
        Ok(rows.row(0).to_owned())
    }

    /// Applies the network to every row of `x`.
    pub fn forward_rows(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dimension("mlp input", self.input_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i < last {
                h.mapv_inplace(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Puts the parameters on `tape` with consecutive ids starting at `first_id`.
    pub fn register<'a>(&'a self, tape: &mut GradTape<'a, T>, first_id: usize) -> MlpNodes {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            weights.push(tape.param(first_id + 2 * i, &layer.weight));
            biases.push(tape.param(first_id + 2 * i + 1, &layer.bias));
        }
        MlpNodes {
            weights,
            biases,
            activation: self.activation,
            input_dim: self.input_dim(),
        }
    }
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// Tape handles of a registered [`Mlp`].
///
/// The first layer can be fed by several column blocks of the input, each
/// coming from a different node (`project_input`). This lets callers
/// compute the per-node part and the per-edge part of a message input
/// separately and add them after broadcasting, instead of materialising the
/// concatenated input for every edge.
#[derive(Debug, Clone)]
pub struct MlpNodes {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
    activation: Activation,
    input_dim: usize,
}

impl MlpNodes {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// First-layer matrix product of the given input blocks, without bias.
    pub fn project_input<T: Real>(&self, tape: &mut GradTape<'_, T>, blocks: &[(NodeId, Range<usize>)]) -> NodeId {
        tape.linear(blocks, self.weights[0])
    }

    /// Continues from a first-layer pre-activation (without bias).
    pub fn finish<T: Real>(&self, tape: &mut GradTape<'_, T>, pre: NodeId) -> NodeId {
        let last = self.weights.len() - 1;
        let mut h = pre;
        for i in 0..self.weights.len() {
            if i > 0 {
                h = tape.matmul(h, self.weights[i]);
            }
            h = tape.add_row(h, self.biases[i]);
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }

    pub fn forward<T: Real>(&self, tape: &mut GradTape<'_, T>, x: NodeId) -> NodeId {
        let pre = self.project_input(tape, &[(x, 0..self.input_dim)]);
        self.finish(tape, pre)
    }
}
