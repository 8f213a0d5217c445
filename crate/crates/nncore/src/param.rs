use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// A trainable tensor with its gradient accumulator.
///
/// Serializes as the bare value tensor; gradients are transient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Tensor", into = "Tensor")]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

impl From<Tensor> for Param {
    fn from(value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }
}

impl From<Param> for Tensor {
    fn from(p: Param) -> Self {
        p.value
    }
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::zeros(shape).into()
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        t.into()
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns trainable parameters, visited in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Global L2 norm over all accumulated gradients.
    fn grad_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}
