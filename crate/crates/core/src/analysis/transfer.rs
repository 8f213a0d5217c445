use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, std_error};
use crate::envgen::UrlUniverse;
use crate::error::{CoreError, Result};
use crate::metrics::{l1, l2_split, l3, l4, personalized_split, L2Split, MetricRow, Personalization, PersonalizedL2};
use crate::persona::{build_persona, sample_user_type, McModel, Persona, PersonaSpec};
use crate::rng::derive_seed;
use crate::selector::Obfuscator;
use crate::tracker::Tracker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub personas: usize,
    pub persona: PersonaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaMetrics {
    pub persona_id: usize,
    pub user_type: usize,
    pub obfuscations: usize,
    /// `None` when the obfuscated profile triggers no segment.
    pub l1: Option<f64>,
    pub l2: L2Split,
    pub l3: f64,
    /// `None` when the tracker cannot report bid values.
    pub l4: Option<f64>,
    pub personalized: Option<PersonalizedL2>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub personas: usize,
    pub l1_mean: f64,
    pub l1_se: f64,
    pub l1_excluded: usize,
    pub l2_mean: f64,
    pub l2_new_mean: f64,
    pub l2_removed_mean: f64,
    pub l3_mean: f64,
    pub l3_se: f64,
    pub l4_mean: Option<f64>,
    pub l4_excluded: usize,
    pub allowed_l2_mean: Option<f64>,
    pub disallowed_l2_mean: Option<f64>,
    pub mean_obfuscations: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub approach: String,
    pub alpha: f64,
    pub rows: Vec<PersonaMetrics>,
    pub summary: MetricSummary,
}

impl TransferReport {
    pub fn metric_rows(&self, run_id: &str) -> Vec<MetricRow> {
        let mut out = Vec::with_capacity(self.rows.len() * 6);
        for r in &self.rows {
            let mut push = |metric: &str, value: Option<f64>| {
                out.push(MetricRow { run_id: run_id.to_string(), persona_id: r.persona_id, metric: metric.to_string(), value, excluded: value.is_none() });
            };
            push("l1", r.l1);
            push("l2", Some(r.l2.total as f64));
            push("l2_new", Some(r.l2.new as f64));
            push("l2_removed", Some(r.l2.removed as f64));
            push("l3", Some(r.l3));
            push("l4", r.l4);
            if let Some(p) = r.personalized {
                push("l2_allowed", Some(p.allowed as f64));
                push("l2_disallowed", Some(p.disallowed as f64));
            }
        }
        out
    }
}

pub fn summarize(rows: &[PersonaMetrics]) -> MetricSummary {
    let l1s: Vec<f64> = rows.iter().filter_map(|r| r.l1).collect();
    let l3s: Vec<f64> = rows.iter().map(|r| r.l3).collect();
    let l4s: Vec<f64> = rows.iter().filter_map(|r| r.l4).collect();
    let avg = |f: &dyn Fn(&PersonaMetrics) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    let personalized: Vec<PersonalizedL2> = rows.iter().filter_map(|r| r.personalized).collect();
    let (allowed, disallowed) = if personalized.is_empty() {
        (None, None)
    } else {
        (
            Some(mean(&personalized.iter().map(|p| p.allowed as f64).collect::<Vec<_>>())),
            Some(mean(&personalized.iter().map(|p| p.disallowed as f64).collect::<Vec<_>>())),
        )
    };
    MetricSummary {
        personas: rows.len(),
        l1_mean: if l1s.is_empty() { 0.0 } else { mean(&l1s) },
        l1_se: if l1s.is_empty() { 0.0 } else { std_error(&l1s) },
        l1_excluded: rows.len() - l1s.len(),
        l2_mean: avg(&|r| r.l2.total as f64),
        l2_new_mean: avg(&|r| r.l2.new as f64),
        l2_removed_mean: avg(&|r| r.l2.removed as f64),
        l3_mean: mean(&l3s),
        l3_se: std_error(&l3s),
        l4_mean: (!l4s.is_empty()).then(|| mean(&l4s)),
        l4_excluded: rows.len() - l4s.len(),
        allowed_l2_mean: allowed,
        disallowed_l2_mean: disallowed,
        mean_obfuscations: avg(&|r| r.obfuscations as f64),
    }
}

/// All four losses of a finished persona against its own base persona,
/// measured on the final windows.
pub fn persona_metrics(
    universe: &UrlUniverse,
    tracker: &dyn Tracker,
    persona: &Persona,
    persona_id: usize,
    personalization: Option<&Personalization>,
) -> Result<PersonaMetrics> {
    let w = tracker.window();
    let obfuscated = universe.window(&persona.ids(), w);
    let base = universe.window(&persona.user_ids(), w);
    let (xo, xu) = (tracker.segments(&obfuscated)?, tracker.segments(&base)?);
    let (bo, bu) = (tracker.bid_classes(&obfuscated)?, tracker.bid_classes(&base)?);
    let l1 = match l1(&xo, &xu) {
        Ok(v) => Some(v),
        Err(CoreError::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let l4 = match (tracker.bid_values(&obfuscated)?, tracker.bid_values(&base)?) {
        (Some(vo), Some(vu)) => Some(l4(&vo, &vu)?),
        _ => None,
    };
    Ok(PersonaMetrics {
        persona_id,
        user_type: persona.user_type,
        obfuscations: persona.obfuscation_count(),
        l1,
        l2: l2_split(&xo, &xu)?,
        l3: l3(&bo, &bu)?,
        l4,
        personalized: personalization.map(|p| personalized_split(&xo, &xu, p)).transpose()?,
    })
}

/// Persona `i` uses the same seed for every approach, so base personas are
/// shared across approaches evaluated at the same budget.
pub fn evaluation_personas(selector: &dyn Obfuscator, universe: &UrlUniverse, model: &McModel, config: &EvalConfig, seed: u64) -> Result<Vec<Persona>> {
    let spec = PersonaSpec { alpha: selector.forced_alpha().unwrap_or(config.persona.alpha), ..config.persona };
    (0..config.personas)
        .into_par_iter()
        .map(|i| {
            let pseed = derive_seed(seed, "eval", i as u64);
            let mut session = selector.session();
            build_persona(model, universe, &spec, sample_user_type(model, pseed), session.as_mut(), pseed)
        })
        .collect()
}

/// Builds obfuscated personas with `selector` and scores them against
/// `tracker` (normally the oracles).
pub fn transferability_eval(
    selector: &dyn Obfuscator,
    tracker: &dyn Tracker,
    universe: &UrlUniverse,
    model: &McModel,
    config: &EvalConfig,
    personalization: Option<&Personalization>,
    seed: u64,
) -> Result<TransferReport> {
    if config.personas == 0 {
        return Err(CoreError::Config("evaluation needs at least one persona".into()));
    }
    let personas = evaluation_personas(selector, universe, model, config, seed)?;
    let rows = personas
        .par_iter()
        .enumerate()
        .map(|(i, p)| persona_metrics(universe, tracker, p, i, personalization))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferReport {
        approach: selector.name().to_string(),
        alpha: selector.forced_alpha().unwrap_or(config.persona.alpha),
        summary: summarize(&rows),
        rows,
    })
}
