//! Fully connected networks with analytic backpropagation and Adam.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit)),
            bias: DVector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    /// Forward pass on a batch stored column-wise (`in × B`).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.inputs() {
            return Err(Error::shape(format!("layer expects {} inputs, got {}", self.inputs(), x.nrows())));
        }
        let mut y = &self.weights * x;
        for mut col in y.column_iter_mut() {
            col += &self.bias;
        }
        let act = self.activation;
        y.apply(|v| *v = act.apply(*v));
        Ok(y)
    }
}

/// Gradients with the same layout as a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.outputs(), l.inputs())).collect(),
            bias: net.layers.iter().map(|l| DVector::zeros(l.outputs())).collect(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum::<f64>() + self.bias.iter().map(|b| b.norm_squared()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations of every layer from one forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<DMatrix<f64>>,
}

impl Tape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.values.last().expect("tape holds the input")
    }
}

impl Mlp {
    /// `sizes = [in, h1, …, out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| DenseLayer::init(sizes[i], sizes[i + 1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Tape> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(values.last().expect("non-empty"))?;
            values.push(next);
        }
        Ok(Tape { values })
    }

    /// Backpropagates `upstream = ∂L/∂output` (`out × B`) and returns the
    /// parameter gradients together with `∂L/∂input`.
    pub fn backward(&self, tape: &Tape, upstream: &DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>)> {
        if upstream.shape() != tape.output().shape() {
            return Err(Error::shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.shape(),
                tape.output().shape()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &tape.values[i + 1];
            let act = layer.activation;
            delta.zip_apply(y, |d, yv| *d *= act.derivative(yv));
            grads.weights[i] = &delta * tape.values[i].transpose();
            grads.bias[i] = delta.column_sum();
            delta = layer.weights.transpose() * &delta;
        }
        Ok((grads, delta))
    }

    /// Weights (column-major) then bias, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::shape(format!("{} values for {} parameters", values.len(), self.n_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub settings: AdamSettings,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub fn new(net: &Mlp, settings: AdamSettings) -> Self {
        Self { settings, m: Gradients::zeros_like(net), v: Gradients::zeros_like(net), t: 0 }
    }

    pub fn step(&mut self, net: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let AdamSettings { learning_rate, beta1, beta2, epsilon } = self.settings;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                p[k] -= learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + epsilon);
            }
        };
        for (i, layer) in net.layers.iter_mut().enumerate() {
            update(
                layer.weights.as_mut_slice(),
                self.m.weights[i].as_mut_slice(),
                self.v.weights[i].as_mut_slice(),
                g.weights[i].as_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                self.m.bias[i].as_mut_slice(),
                self.v.bias[i].as_mut_slice(),
                g.bias[i].as_slice(),
            );
        }
    }
}
