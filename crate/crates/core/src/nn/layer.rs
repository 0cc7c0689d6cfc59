use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Float types usable as network parameters.
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    in_dim: usize,
    out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {in_dim} -> {out_dim}"
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        })
    }

    /// Uniform He initialisation, bound `sqrt(6 / fan_in)`, zero bias.
    pub fn he_uniform<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim)?;
        let bound = (6.0 / in_dim as f64).sqrt();
        for w in &mut layer.weights {
            *w = T::from_f64(rng.gen_range(-bound..bound));
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.in_dim + col]
    }

    /// Pre-activations `W x + b`.
    pub fn affine(&self, x: &[T]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::dims("layer input", self.in_dim, x.len()));
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .fold(b.as_f64(), |acc, (w, v)| acc + w.as_f64() * v.as_f64())
            })
            .collect())
    }

    /// Accumulates `dW += delta x^T`, `db += delta` into `grads` (weights then
    /// bias) and returns `W^T delta`.
    pub(crate) fn backward_into(&self, x: &[T], delta: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grads.split_at_mut(self.weights.len());
        let mut gx = vec![0.0; self.in_dim];
        for (o, &d) in delta.iter().enumerate() {
            gb[o] += d;
            if d == 0.0 {
                continue;
            }
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            for ((g, w), (xi, gxi)) in gw[row.clone()]
                .iter_mut()
                .zip(&self.weights[row])
                .zip(x.iter().zip(gx.iter_mut()))
            {
                *g += d * xi.as_f64();
                *gxi += d * w.as_f64();
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let mut l = DenseLayer::<f64>::zeros(3, 3).unwrap();
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(l.affine(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
        let mut g = vec![0.0; l.param_count()];
        let gx = l.backward_into(&[1.0, -2.0, 0.5], &[0.3, 0.2, 0.1], &mut g);
        assert_eq!(gx, vec![0.3, 0.2, 0.1]);
    }

    #[test]
    fn he_init_is_bounded_and_seeded() {
        let a = DenseLayer::<f32>::he_uniform(6, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = DenseLayer::<f32>::he_uniform(6, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().all(|w| w.abs() <= 1.0));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn dims_checked() {
        assert!(DenseLayer::<f32>::zeros(0, 2).is_err());
        let l = DenseLayer::<f32>::zeros(2, 2).unwrap();
        assert!(l.affine(&[1.0]).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
