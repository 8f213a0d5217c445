use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::detector::{stealth_eval, DetectorConfig};
use super::transfer::{transferability_eval, EvalConfig, MetricSummary};
use crate::envgen::UrlUniverse;
use crate::error::{CoreError, Result};
use crate::persona::{McModel, PersonaSpec};
use crate::rng::derive_seed;
use crate::selector::Obfuscator;
use crate::tracker::Tracker;

pub const ALPHA_GRID: [f64; 4] = [0.05, 0.1, 0.15, 0.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub eval: EvalConfig,
    /// Detection error is measured only when set.
    pub detector: Option<DetectorConfig>,
    pub stealth_personas: usize,
}

impl SweepConfig {
    pub fn new(eval: EvalConfig) -> Self {
        Self { alphas: ALPHA_GRID.to_vec(), eval, detector: None, stealth_personas: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub approach: String,
    pub alpha: f64,
    pub summary: MetricSummary,
    pub detection_error: Option<f64>,
}

/// One row per approach per budget, in grid order. `approaches` is asked for
/// the selectors at each budget, so agents can be retrained or reused.
pub fn budget_sweep(
    approaches: &mut dyn FnMut(f64) -> Result<Vec<Arc<dyn Obfuscator>>>,
    tracker: &dyn Tracker,
    universe: &UrlUniverse,
    model: &McModel,
    config: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if config.alphas.iter().any(|a| !(0.0..1.0).contains(a)) {
        return Err(CoreError::Config(format!("budget grid {:?} leaves [0, 1)", config.alphas)));
    }
    let mut rows = Vec::new();
    for (k, &alpha) in config.alphas.iter().enumerate() {
        let eval = EvalConfig { persona: PersonaSpec { alpha, ..config.eval.persona }, ..config.eval };
        for selector in approaches(alpha)? {
            let report = transferability_eval(selector.as_ref(), tracker, universe, model, &eval, None, seed)?;
            let detection_error = match &config.detector {
                Some(det) => {
                    let stealth = EvalConfig { personas: config.stealth_personas, ..eval };
                    Some(stealth_eval(selector.as_ref(), universe, model, &stealth, det, derive_seed(seed, "sweep-stealth", k as u64))?.detection_error)
                }
                None => None,
            };
            rows.push(SweepRow { approach: report.approach, alpha: report.alpha, summary: report.summary, detection_error });
        }
    }
    Ok(rows)
}
