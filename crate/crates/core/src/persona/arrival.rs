use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::build::Source;
use crate::error::{CoreError, Result};

/// Obfuscation rate that makes obfuscation visits an α share of all visits:
/// `λ^o = λ^u · α / (1 − α)`.
pub fn plan_rate(user_rate: f64, alpha: f64) -> Result<f64> {
    if !(user_rate > 0.0 && user_rate.is_finite()) {
        return Err(CoreError::Config(format!("user rate must be positive, got {user_rate}")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(CoreError::Config(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(user_rate * alpha / (1.0 - alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalKind {
    BernoulliSlots,
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPlan {
    pub user_rate: f64,
    pub obfuscation_rate: f64,
    pub kind: ArrivalKind,
}

impl ArrivalPlan {
    pub fn new(user_rate: f64, alpha: f64, kind: ArrivalKind) -> Result<Self> {
        Ok(Self { user_rate, obfuscation_rate: plan_rate(user_rate, alpha)?, kind })
    }

    /// Merged arrival times (hours) of two independent Poisson processes over `[0, horizon)`.
    pub fn poisson_schedule<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Vec<(f64, Source)> {
        let mut events = Vec::new();
        for (rate, source) in [(self.user_rate, Source::User), (self.obfuscation_rate, Source::Obfuscation)] {
            if rate <= 0.0 {
                continue;
            }
            let exp = Exp::new(rate).expect("rate is positive");
            let mut t = exp.sample(rng);
            while t < horizon {
                events.push((t, source));
                t += exp.sample(rng);
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        events
    }
}
