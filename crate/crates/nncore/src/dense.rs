use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, NnError, Result};
use crate::loss::softmax;
use crate::param::{Param, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: Param::glorot(&[outputs, inputs], inputs, outputs, rng),
            bias: Param::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<DenseCache> {
        let (out, inp) = (self.outputs(), self.inputs());
        check_len(inp, x.len())?;
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let output = (0..out)
            .map(|o| {
                let row = &w[o * inp..(o + 1) * inp];
                let s = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                self.activation.apply(s)
            })
            .collect();
        Ok(DenseCache {
            input: x.to_vec(),
            output,
        })
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &DenseCache, dy: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.outputs(), self.inputs());
        let mut dx = vec![0.0; inp];
        let w = self.weight.value.data();
        for o in 0..out {
            let dz = dy[o] * self.activation.derivative_from_output(cache.output[o]);
            if dz == 0.0 {
                continue;
            }
            self.bias.grad[o] += dz;
            let grow = &mut self.weight.grad[o * inp..(o + 1) * inp];
            let wrow = &w[o * inp..(o + 1) * inp];
            for i in 0..inp {
                grow[i] += dz * cache.input[i];
                dx[i] += dz * wrow[i];
            }
        }
        dx
    }
}

impl Parameters for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    Softmax,
    Identity,
}

/// Stack of dense layers. The last layer is linear; `final_activation`
/// decides whether `output` is a softmax distribution or the raw values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseHead {
    pub layers: Vec<Dense>,
    pub final_activation: FinalActivation,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    layers: Vec<DenseCache>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

impl DenseHead {
    /// `sizes = [input, hidden..., output]`; hidden layers use `hidden_activation`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_activation: Activation,
        final_activation: FinalActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Config(format!("dense head sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden_activation };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Ok(Self {
            layers,
            final_activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward(&self, x: &[f64]) -> Result<HeadCache> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let c = layer.forward(&cur)?;
            cur = c.output.clone();
            caches.push(c);
        }
        let output = match self.final_activation {
            FinalActivation::Softmax => softmax(&cur),
            FinalActivation::Identity => cur.clone(),
        };
        Ok(HeadCache {
            layers: caches,
            logits: cur,
            output,
        })
    }

    /// Backpropagates a gradient with respect to the pre-softmax logits.
    pub fn backward(&mut self, cache: &HeadCache, dlogits: &[f64]) -> Vec<f64> {
        let mut grad = dlogits.to_vec();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            grad = layer.backward(c, &grad);
        }
        grad
    }
}

impl Parameters for DenseHead {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
