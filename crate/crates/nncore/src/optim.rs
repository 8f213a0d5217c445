use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::param::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm cap applied before the update.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn sgd_momentum(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum: 0.9,
            clip_norm: Some(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(NnError::Config(format!("clip norm must be > 0, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradient was multiplied by (1.0 when unclipped).
    pub clip_scale: f64,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    velocity: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies the accumulated gradients and clears them.
    pub fn step<M: Parameters + ?Sized>(&mut self, model: &mut M) -> Result<StepStats> {
        let grad_norm = model.grad_norm();
        if !grad_norm.is_finite() {
            model.zero_grad();
            return Err(NnError::NonFinite("gradient".into()));
        }
        let clip_scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        let mut params = model.params_mut();
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let value = p.value.data_mut();
            for k in 0..value.len() {
                let g = p.grad[k] * clip_scale;
                let delta = match self.config.kind {
                    OptimizerKind::Sgd => g,
                    OptimizerKind::SgdMomentum => {
                        v[k] = mu * v[k] + g;
                        v[k]
                    }
                };
                value[k] -= lr * delta;
            }
            p.zero_grad();
        }
        Ok(StepStats { grad_norm, clip_scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Param;
    use crate::tensor::Tensor;

    struct One(Param);
    impl Parameters for One {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn clipping_scales_to_cap() {
        let mut m = One(Tensor::zeros(&[2]).into());
        m.0.grad = vec![3.0, 4.0];
        let mut opt = Optimizer::new(OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 1.0,
            momentum: 0.0,
            clip_norm: Some(1.0),
        })
        .unwrap();
        let stats = opt.step(&mut m).unwrap();
        assert_eq!(stats.grad_norm, 5.0);
        assert!((stats.clip_scale - 0.2).abs() < 1e-15);
        assert!((m.0.value.data()[0] + 0.6).abs() < 1e-15);
        assert!((m.0.value.data()[1] + 0.8).abs() < 1e-15);
        assert_eq!(m.0.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Optimizer::new(OptimizerConfig::sgd_momentum(0.0)).is_err());
        let mut cfg = OptimizerConfig::sgd_momentum(0.1);
        cfg.clip_norm = Some(0.0);
        assert!(Optimizer::new(cfg).is_err());
    }

    #[test]
    fn non_finite_gradient_is_refused() {
        let mut m = One(Tensor::zeros(&[1]).into());
        m.0.grad = vec![f64::NAN];
        let mut opt = Optimizer::new(OptimizerConfig::sgd_momentum(0.1)).unwrap();
        assert!(matches!(opt.step(&mut m), Err(NnError::NonFinite(_))));
        assert_eq!(m.0.value.data(), &[0.0]);
    }
}
