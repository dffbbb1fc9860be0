use serde::{Deserialize, Serialize};

use super::ops::matmul_raw;
use super::{SeededRng, Tensor};
use crate::error::{Error, Result};

/// Affine map applied along the last axis (`1×1` convolution semantics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let [_, out] = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim(format!(
                "dense bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn identity(n: usize) -> Self {
        Dense {
            weight: Tensor::eye(n),
            bias: Tensor::zeros(&[n]),
        }
    }

    /// Gaussian weights with std `1/sqrt(input)`, zero bias.
    pub fn random(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        Dense {
            weight: rng.normal_tensor(&[input, output], std),
            bias: Tensor::zeros(&[output]),
        }
    }

    /// Like [`Dense::random`] but with a random bias as well.
    pub fn random_with_bias(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let mut d = Self::random(input, output, rng);
        d.bias = rng.normal_tensor(&[output], 0.1);
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies the map to every vector along the last axis of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (i, o) = (self.input_dim(), self.output_dim());
        if x.last_dim() != i {
            return Err(Error::dim(format!(
                "dense {i}->{o} applied to {:?}",
                x.shape()
            )));
        }
        let rows = x.len() / i;
        let mut out = matmul_raw(x.data(), self.weight.data(), rows, i, o);
        for row in out.chunks_exact_mut(o) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = o;
        Tensor::new(shape, out)
    }
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// GELU, tanh approximation.
pub fn gelu(x: f32) -> f32 {
    const K: f32 = 0.797_884_56; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}
