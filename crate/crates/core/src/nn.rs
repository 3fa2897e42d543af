//! Dense feedforward networks split into a frozen backbone and a plastic head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = activation(W x + b)` with `W` stored row-major as `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(config("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::Shape {
                what: "layer weights",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("layer weights"));
        }
        if let Some(b) = &bias {
            if b.len() != out_dim {
                return Err(Error::Shape {
                    what: "layer bias",
                    expected: out_dim,
                    got: b.len(),
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer bias"));
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// He-uniform weights, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(config("layer dimensions must be positive"));
        }
        let limit = math::sqrt(6.0 / in_dim as f64);
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let bias = with_bias.then(|| vec![0.0; out_dim]);
        Self::new(in_dim, out_dim, weights, bias, activation)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    /// Weight from input unit `i` to output unit `j`.
    #[inline]
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.in_dim + i]
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    /// Pre-activation `W x + b` written into `out`.
    pub fn pre_activation_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (w, xi) in self.row(j).iter().zip(x) {
                acc += w * xi;
            }
            if let Some(b) = &self.bias {
                acc += b[j];
            }
            *o = acc;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.pre_activation_into(x, &mut out);
        for o in &mut out {
            *o = self.activation.apply(*o);
        }
        out
    }
}

/// Per-layer pre- and post-activation values from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

/// Ordered dense layers; layers `head_start..` form the plastic head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    head_start: usize,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>, head_start: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(config("network needs at least one layer"));
        }
        if head_start >= layers.len() {
            return Err(config(format!(
                "head_start {head_start} out of range for {} layers",
                layers.len()
            )));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(input(format!(
                    "layer {l} outputs {} units but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        if layers[layers.len() - 1].activation != Activation::Identity {
            return Err(config("output layer must use identity activation"));
        }
        Ok(Self { layers, head_start })
    }

    /// He-uniform network with relu hidden layers and an identity output layer.
    ///
    /// `widths` lists every layer width including the input, so `widths.len() - 1`
    /// layers are created. Backbone layers always carry a bias; head layers only
    /// when `head_bias` is set.
    pub fn seeded(widths: &[usize], head_start: usize, head_bias: bool, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(config("need at least input and output widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let act = if l + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            let bias = l < head_start || head_bias;
            layers.push(DenseLayer::he_uniform(widths[l], widths[l + 1], act, bias, &mut rng)?);
        }
        Self::new(layers, head_start)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut DenseLayer {
        &mut self.layers[l]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn head_start(&self) -> usize {
        self.head_start
    }

    pub fn head(&self) -> &[DenseLayer] {
        &self.layers[self.head_start..]
    }

    pub fn plastic_layer_count(&self) -> usize {
        self.layers.len() - self.head_start
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn head_input_dim(&self) -> usize {
        self.layers[self.head_start].in_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::Shape {
                what: "network input",
                expected: self.feature_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Post-activation output of every layer; the last entry is the logit vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.forward(acts.last().map_or(x, |a| a.as_slice()));
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.out_dim];
            layer.pre_activation_into(post.last().map_or(x, |a| a.as_slice()), &mut z);
            post.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(ForwardTrace { pre, post })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `h`, the input of layer `start`.
    pub fn forward_from(&self, start: usize, h: &[f64]) -> Result<Vec<f64>> {
        if start >= self.layers.len() {
            return Err(config(format!("layer {start} out of range")));
        }
        if h.len() != self.layers[start].in_dim {
            return Err(Error::Shape {
                what: "layer input",
                expected: self.layers[start].in_dim,
                got: h.len(),
            });
        }
        let mut cur = self.layers[start].forward(h);
        for layer in &self.layers[start + 1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Backbone output feeding the head (the raw input when there is no backbone).
    pub fn head_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers[..self.head_start] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    pub fn backbone_fingerprint(&self) -> u64 {
        layers_fingerprint(&self.layers[..self.head_start])
    }

    pub fn head_fingerprint(&self) -> u64 {
        layers_fingerprint(&self.layers[self.head_start..])
    }

    pub fn same_architecture(&self, other: &DenseNetwork) -> bool {
        self.head_start == other.head_start
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim
                    && a.out_dim == b.out_dim
                    && a.activation == b.activation
                    && a.bias.is_some() == b.bias.is_some()
            })
    }
}

fn layers_fingerprint(layers: &[DenseLayer]) -> u64 {
    let mut all: Vec<f64> = Vec::new();
    for l in layers {
        all.extend_from_slice(&l.weights);
        if let Some(b) = &l.bias {
            all.extend_from_slice(b);
        }
    }
    math::fingerprint(&all)
}
