use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Softplus,
    Sigmoid,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Softplus => g.softplus(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Fully connected architecture. Layer `i` in `skip_layers` sees `[hidden, input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub depth: usize,
    pub width: usize,
    #[serde(default)]
    pub skip_layers: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, out_dim: usize, depth: usize, width: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            depth,
            width,
            skip_layers: Vec::new(),
            activation: Activation::Softplus,
            output_activation: Activation::Identity,
        }
    }

    pub fn with_skip(mut self, layer: usize) -> Self {
        self.skip_layers.push(layer);
        self
    }

    pub fn with_output(mut self, act: Activation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.in_dim == 0 || self.out_dim == 0 || (self.depth > 1 && self.width == 0) {
            return Err(Error::Config(format!("degenerate mlp {self:?}")));
        }
        if let Some(s) = self.skip_layers.iter().find(|&&s| s == 0 || s >= self.depth) {
            return Err(Error::Config(format!("skip layer {s} outside 1..{}", self.depth)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let mut fan_in = if i == 0 { self.in_dim } else { self.width };
                if self.skip_layers.contains(&i) {
                    fan_in += self.in_dim;
                }
                let fan_out = if i + 1 == self.depth { self.out_dim } else { self.width };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// Parameters are stored as `[w0, b0, w1, b1, ...]` with `w: fan_in x fan_out`, `b: 1 x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * spec.depth);
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w)?);
            params.push(Tensor::zeros(&[1, fan_out]));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if params.len() != 2 * dims.len() {
            return Err(Error::ShapeMismatch(format!("{} tensors for {} layers", params.len(), dims.len())));
        }
        for (i, (fi, fo)) in dims.into_iter().enumerate() {
            if params[2 * i].shape() != [fi, fo] || params[2 * i + 1].shape() != [1, fo] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i}: expected {fi}x{fo}, got {:?} / {:?}",
                    params[2 * i].shape(),
                    params[2 * i + 1].shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    /// Multiplies the last layer (weights and bias) by `s`.
    pub fn scale_last_layer(&mut self, s: f64) {
        let n = self.params.len();
        for t in &mut self.params[n - 2..] {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Places the parameters on a graph; trainable ones become differentiable leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.param(p) } else { g.input(p.clone()) })
            .collect()
    }

    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        let cols = g.value(input).cols();
        if cols != self.spec.in_dim {
            return Err(Error::ShapeMismatch(format!("mlp input has {cols} columns, expected {}", self.spec.in_dim)));
        }
        let mut h = input;
        for i in 0..self.spec.depth {
            if self.spec.skip_layers.contains(&i) {
                h = g.concat(&[h, input])?;
            }
            h = g.affine(h, params[2 * i], Some(params[2 * i + 1]))?;
            let act = if i + 1 == self.spec.depth {
                self.spec.output_activation
            } else {
                self.spec.activation
            };
            h = act.apply(g, h);
        }
        Ok(h)
    }

    /// Inference without gradients.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.input(input.clone());
        let y = self.forward_graph(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }
}
