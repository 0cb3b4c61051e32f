//! Fully connected ReLU networks with hand-written reverse-mode gradients.
//!
//! The topology is fixed: affine layers with ReLU between them and a linear
//! output layer. That is all the bin and delta heads need, so there is no
//! general autodiff graph here.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use loss::{kl_divergence, log_softmax, softmax, softmax_cross_entropy};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// One affine layer `x ↦ W x + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameters of a multi-layer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Gradients with the same shape as an [`Mlp`].
pub type MlpGrads = Mlp;

/// Activations cached by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug)]
pub struct GradTape {
    /// Input to each layer.
    inputs: Vec<DVector<f64>>,
    /// Pre-activation output of each layer.
    preacts: Vec<DVector<f64>>,
}

impl Mlp {
    /// All-zero network with the given layer sizes (input first, output last).
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    /// He-uniform weights `U(±√(6 / fan_in))`, zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        for layer in &mut net.layers {
            let limit = (6.0 / layer.input_dim() as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(invalid(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(invalid(format!("layer {i} bias has the wrong length")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Zero network of the same shape.
    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    /// Parameter tensors in storage order: weights then bias, per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors().flatten().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|x| x.is_finite())
    }

    fn check_input(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.input_dim() {
            return Err(invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                f.len()
            )));
        }
        Ok(())
    }

    /// Output only, without caching activations.
    pub fn predict(&self, f: &[f64]) -> Result<DVector<f64>> {
        self.check_input(f)?;
        let mut x = DVector::from_column_slice(f);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &x + &layer.bias;
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward(&self, f: &[f64]) -> Result<(DVector<f64>, GradTape)> {
        self.check_input(f)?;
        let n = self.layers.len();
        let mut tape = GradTape {
            inputs: Vec::with_capacity(n),
            preacts: Vec::with_capacity(n),
        };
        let mut x = DVector::from_column_slice(f);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = &layer.weights * &x + &layer.bias;
            let next = if i + 1 < n { z.map(|v| v.max(0.0)) } else { z.clone() };
            tape.inputs.push(x);
            tape.preacts.push(z);
            x = next;
        }
        Ok((x, tape))
    }

    /// Exact gradients of a scalar loss given `upstream = ∂loss/∂output`.
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: GradTape, upstream: &[f64]) -> Result<(MlpGrads, DVector<f64>)> {
        let mut grads = self.zeros_like();
        let input_grad = self.backward_into(tape, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        tape: GradTape,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<DVector<f64>> {
        if tape.preacts.len() != self.layers.len()
            || tape
                .preacts
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.len() != l.output_dim())
        {
            return Err(Error::InvalidState(
                "gradient tape was recorded by a different network".into(),
            ));
        }
        if upstream.len() != self.output_dim() {
            return Err(invalid(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grads.sizes() != self.sizes() {
            return Err(invalid("gradient accumulator has the wrong shape"));
        }
        let n = self.layers.len();
        let mut g = DVector::from_column_slice(upstream);
        for i in (0..n).rev() {
            if i + 1 < n {
                let z = &tape.preacts[i];
                g.zip_apply(z, |gv, zv| {
                    if zv <= 0.0 {
                        *gv = 0.0
                    }
                });
            }
            let layer = &self.layers[i];
            let acc = &mut grads.layers[i];
            acc.weights.ger(1.0, &g, &tape.inputs[i], 1.0);
            acc.bias += &g;
            g = layer.weights.tr_mul(&g);
        }
        Ok(g)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(invalid("layer sizes need at least an input and an output"));
    }
    if sizes.contains(&0) {
        return Err(invalid(format!("layer sizes must be positive: {sizes:?}")));
    }
    Ok(())
}
