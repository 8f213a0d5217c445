use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::param::{Param, Parameters};
use crate::tensor::Tensor;

/// Geometry of a text-CNN encoder over a `rows × cols` embedding matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Window length `w` (number of embedded pages).
    pub rows: usize,
    /// Embedding dimension `d`.
    pub cols: usize,
    pub kernel_heights: Vec<usize>,
    pub filters_per_kernel: usize,
}

impl CnnConfig {
    pub fn output_dim(&self) -> usize {
        self.filters_per_kernel * self.kernel_heights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.filters_per_kernel == 0 || self.kernel_heights.is_empty() {
            return Err(NnError::Config(format!("degenerate CNN config {self:?}")));
        }
        if let Some(h) = self.kernel_heights.iter().find(|h| **h == 0 || **h > self.rows) {
            return Err(NnError::Config(format!(
                "kernel height {h} does not fit {} input rows",
                self.rows
            )));
        }
        Ok(())
    }
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            rows: 20,
            cols: 300,
            kernel_heights: vec![3, 4, 5],
            filters_per_kernel: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ConvBank {
    height: usize,
    /// `filters × height × cols`
    weight: Param,
    bias: Param,
}

/// Kim-style sentence CNN: each filter spans the full embedding width,
/// slides over rows, goes through ReLU and is max-pooled over positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextCnnEncoder {
    config: CnnConfig,
    banks: Vec<ConvBank>,
}

#[derive(Clone, Debug)]
pub struct CnnCache {
    input: Tensor,
    /// Winning position per output unit, `None` when the ReLU clipped it.
    argmax: Vec<Option<usize>>,
    output: Vec<f64>,
    margin: f64,
}

impl CnnCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Smallest distance of any unit from a ReLU or max-pool switch. The
    /// encoder is differentiable only where this is positive.
    pub fn margin(&self) -> f64 {
        self.margin
    }
}

impl TextCnnEncoder {
    pub fn new<R: Rng + ?Sized>(config: CnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let banks = config
            .kernel_heights
            .iter()
            .map(|&h| {
                let fan_in = h * config.cols;
                ConvBank {
                    height: h,
                    weight: Param::glorot(&[config.filters_per_kernel, h, config.cols], fan_in, config.filters_per_kernel, rng),
                    bias: Param::zeros(&[config.filters_per_kernel]),
                }
            })
            .collect();
        Ok(Self { config, banks })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn forward(&self, input: &Tensor) -> Result<CnnCache> {
        input.expect_shape(&[self.config.rows, self.config.cols])?;
        let cols = self.config.cols;
        let x = input.data();
        let filters = self.config.filters_per_kernel;
        let mut output = Vec::with_capacity(self.output_dim());
        let mut argmax = Vec::with_capacity(self.output_dim());
        let mut margin = f64::INFINITY;
        for bank in &self.banks {
            let span = bank.height * cols;
            let w = bank.weight.value.data();
            let b = bank.bias.value.data();
            for f in 0..filters {
                let wf = &w[f * span..(f + 1) * span];
                let mut best = f64::NEG_INFINITY;
                let mut runner_up = f64::NEG_INFINITY;
                let mut best_pos = 0;
                for p in 0..=(self.config.rows - bank.height) {
                    let xs = &x[p * cols..p * cols + span];
                    let s = b[f] + wf.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>();
                    if s > best {
                        runner_up = best;
                        best = s;
                        best_pos = p;
                    } else if s > runner_up {
                        runner_up = s;
                    }
                }
                margin = margin.min(best.abs()).min(best - runner_up);
                if best > 0.0 {
                    output.push(best);
                    argmax.push(Some(best_pos));
                } else {
                    output.push(0.0);
                    argmax.push(None);
                }
            }
        }
        Ok(CnnCache {
            input: input.clone(),
            argmax,
            output,
            margin,
        })
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &CnnCache, dy: &[f64], input_grad: bool) -> Option<Tensor> {
        let cols = self.config.cols;
        let filters = self.config.filters_per_kernel;
        let x = cache.input.data();
        let mut dx = input_grad.then(|| Tensor::zeros(&[self.config.rows, cols]));
        for (k, bank) in self.banks.iter_mut().enumerate() {
            let span = bank.height * cols;
            for f in 0..filters {
                let idx = k * filters + f;
                let (Some(p), g) = (cache.argmax[idx], dy[idx]) else {
                    continue;
                };
                if g == 0.0 {
                    continue;
                }
                bank.bias.grad[f] += g;
                let xs = &x[p * cols..p * cols + span];
                let gw = &mut bank.weight.grad[f * span..(f + 1) * span];
                for (gi, xi) in gw.iter_mut().zip(xs) {
                    *gi += g * xi;
                }
                if let Some(dx) = dx.as_mut() {
                    let wf = &bank.weight.value.data()[f * span..(f + 1) * span];
                    let ds = &mut dx.data_mut()[p * cols..p * cols + span];
                    for (di, wi) in ds.iter_mut().zip(wf) {
                        *di += g * wi;
                    }
                }
            }
        }
        dx
    }
}

impl Parameters for TextCnnEncoder {
    fn params(&self) -> Vec<&Param> {
        self.banks.iter().flat_map(|b| [&b.weight, &b.bias]).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.banks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bias])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_dimensions_give_300_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = TextCnnEncoder::new(CnnConfig::default(), &mut rng).unwrap();
        assert_eq!(enc.output_dim(), 300);
        let out = enc.forward(&Tensor::zeros(&[20, 300])).unwrap();
        assert_eq!(out.output().len(), 300);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CnnConfig { rows: 6, cols: 5, kernel_heights: vec![2, 3], filters_per_kernel: 4 };
        let enc = TextCnnEncoder::new(cfg, &mut rng).unwrap();
        let out = enc.forward(&Tensor::zeros(&[6, 5])).unwrap();
        assert!(out.output().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_geometry_output_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CnnConfig { rows: 5, cols: 4, kernel_heights: vec![2], filters_per_kernel: 3 };
        let enc = TextCnnEncoder::new(cfg, &mut rng).unwrap();
        let x = Tensor::from_vec(&[5, 4], (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(enc.forward(&x).unwrap().output().len(), 3);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CnnConfig { rows: 5, cols: 4, kernel_heights: vec![2], filters_per_kernel: 3 };
        let enc = TextCnnEncoder::new(cfg, &mut rng).unwrap();
        let err = enc.forward(&Tensor::zeros(&[4, 5])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[5, 4]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn kernel_taller_than_window_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = CnnConfig { rows: 3, cols: 4, kernel_heights: vec![4], filters_per_kernel: 1 };
        assert!(TextCnnEncoder::new(cfg, &mut rng).is_err());
    }
}
