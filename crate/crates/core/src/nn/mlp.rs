use rand::Rng;

use super::layer::{Activation, DenseLayer, Scalar};
use crate::error::{Error, Result};

/// Dense layers with ReLU between them and a configurable output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub output: Activation,
}

/// Layer inputs and outputs recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    inputs: Vec<Vec<T>>,
    outputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("tape of a non-empty network")
    }

    /// Smallest |pre-activation| over hidden (ReLU) units; finite-difference
    /// checks are only meaningful away from the ReLU kink.
    pub fn min_hidden_margin(&self) -> f64 {
        let hidden = self.pre_activations.len().saturating_sub(1);
        self.pre_activations[..hidden]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

impl<T: Scalar> Mlp<T> {
    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output dims".into()));
        }
        Ok(())
    }

    /// `dims = [in, hidden..., out]`.
    pub fn zeros(dims: &[usize], output: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, output })
    }

    pub fn he_uniform<R: Rng>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::he_uniform(w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, output })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<f64>, Tape<T>)> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
        };
        let mut current: Vec<T> = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current)?;
            let act = self.activation(i);
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {i}")));
            }
            let next = y.iter().map(|&v| T::from_f64(v)).collect();
            tape.inputs.push(std::mem::replace(&mut current, next));
            tape.pre_activations.push(z);
            tape.outputs.push(y);
        }
        Ok((tape.output().to_vec(), tape))
    }

    /// Adds parameter gradients to `grads` (length [`Mlp::param_count`]) and
    /// returns the gradient with respect to the input.
    pub fn backward_into(&self, tape: &Tape<T>, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.out_dim() {
            return Err(Error::dims("upstream gradient", self.out_dim(), upstream.len()));
        }
        if grads.len() != self.param_count() {
            return Err(Error::dims("gradient buffer", self.param_count(), grads.len()));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::dims("tape", self.layers.len(), tape.inputs.len()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.param_count();
        }
        let mut g = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let act = self.activation(i);
            let delta: Vec<f64> = g
                .iter()
                .zip(&tape.outputs[i])
                .map(|(&u, &y)| u * act.derivative_from_output(y))
                .collect();
            let range = offsets[i]..offsets[i] + layer.param_count();
            g = layer.backward_into(&tape.inputs[i], &delta, &mut grads[range]);
        }
        Ok(g)
    }

    /// Parameter slices in gradient-buffer order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let mut out = DenseLayer::zeros(l.in_dim(), l.out_dim()).expect("valid dims");
                    for (o, i) in out.weights.iter_mut().zip(&l.weights) {
                        *o = U::from_f64(i.as_f64());
                    }
                    for (o, i) in out.bias.iter_mut().zip(&l.bias) {
                        *o = U::from_f64(i.as_f64());
                    }
                    out
                })
                .collect(),
            output: self.output,
        }
    }
}
