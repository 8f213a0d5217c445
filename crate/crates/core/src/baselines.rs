//! Comparison selectors: control, AdNauseam-style ads, TrackThis-style
//! sets, uniform intents and reward-biased intents.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envgen::{UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::persona::{build_persona, sample_user_type, McModel, PersonaSpec, Source, Visit};
use crate::rlagent::LossModel;
use crate::rng::{derive_seed, SimRng};
use crate::selector::{ObfuscationSession, Obfuscator, SelectorRegistry};

fn uniform(pool: &[UrlId], rng: &mut SimRng) -> UrlId {
    pool[rng.random_range(0..pool.len())]
}

pub struct Control;

impl Obfuscator for Control {
    fn name(&self) -> &str {
        "control"
    }

    fn forced_alpha(&self) -> Option<f64> {
        Some(0.0)
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_> {
        Box::new(ControlSession)
    }
}

struct ControlSession;

impl ObfuscationSession for ControlSession {
    fn select(&mut self, _: &UrlUniverse, _: &[Visit], _: &mut SimRng) -> Result<UrlId> {
        Err(CoreError::SelectorNotReady("control".into(), "control personas never obfuscate".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pool {
    Ad,
    Trackthis,
}

pub struct PoolSelector {
    name: &'static str,
    pool: Pool,
}

impl PoolSelector {
    pub fn adnauseam() -> Self {
        Self { name: "adnauseam", pool: Pool::Ad }
    }

    pub fn trackthis() -> Self {
        Self { name: "trackthis", pool: Pool::Trackthis }
    }
}

impl Obfuscator for PoolSelector {
    fn name(&self) -> &str {
        self.name
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_> {
        Box::new(PoolSession(self.pool))
    }
}

struct PoolSession(Pool);

impl ObfuscationSession for PoolSession {
    fn select(&mut self, universe: &UrlUniverse, _: &[Visit], rng: &mut SimRng) -> Result<UrlId> {
        Ok(match self.0 {
            Pool::Ad => uniform(universe.ad_pool(), rng),
            Pool::Trackthis => uniform(universe.trackthis_pool(), rng),
        })
    }
}

pub struct RandIntent;

impl Obfuscator for RandIntent {
    fn name(&self) -> &str {
        "rand-intent"
    }

    fn selects_intents(&self) -> bool {
        true
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_> {
        Box::new(RandIntentSession)
    }
}

pub struct RandIntentSession;

impl ObfuscationSession for RandIntentSession {
    fn select(&mut self, universe: &UrlUniverse, _: &[Visit], rng: &mut SimRng) -> Result<UrlId> {
        let j = rng.random_range(0..universe.subcategory_count());
        Ok(uniform(universe.intent_urls(j), rng))
    }
}

/// Subcategory weights for [`BiasIntent`], nonnegative and summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasWeights {
    pub weights: Vec<f64>,
}

impl BiasWeights {
    /// Floors negatives at zero and normalizes. All-zero input falls back to
    /// uniform; the flag reports the fallback.
    pub fn from_rewards(rewards: &[f64]) -> Result<(Self, bool)> {
        if rewards.is_empty() || rewards.iter().any(|r| !r.is_finite()) {
            return Err(CoreError::InvalidInput("bias rewards must be finite and nonempty".into()));
        }
        let floored: Vec<f64> = rewards.iter().map(|r| r.max(0.0)).collect();
        let total: f64 = floored.iter().sum();
        if total <= 0.0 {
            log::warn!("every subcategory has zero average reward; bias weights fall back to uniform");
            return Ok((Self { weights: vec![1.0 / rewards.len() as f64; rewards.len()] }, true));
        }
        Ok((Self { weights: floored.iter().map(|r| r / total).collect() }, false))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let keyed: BTreeMap<String, f64> = self.weights.iter().enumerate().map(|(j, w)| (j.to_string(), *w)).collect();
        std::fs::write(path, serde_json::to_string_pretty(&keyed)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let keyed: BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut weights = vec![f64::NAN; keyed.len()];
        for (k, w) in keyed {
            let j: usize = k.parse().map_err(|_| CoreError::InvalidInput(format!("bad subcategory key `{k}`")))?;
            *weights.get_mut(j).ok_or_else(|| CoreError::InvalidInput(format!("subcategory key {j} out of range")))? = w;
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(CoreError::InvalidInput("bias weights must be nonnegative".into()));
        }
        Ok(Self { weights })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasEstimation {
    pub samples_per_subcategory: usize,
    /// Length of the base persona each test insertion is appended to.
    pub base_len: usize,
}

impl Default for BiasEstimation {
    fn default() -> Self {
        Self { samples_per_subcategory: 50, base_len: 20 }
    }
}

/// Average reward of a single intent insertion at the end of a fresh base
/// persona, per subcategory.
pub fn average_insertion_rewards(
    universe: &UrlUniverse,
    model: &McModel,
    loss: &dyn LossModel,
    config: &BiasEstimation,
    seed: u64,
) -> Result<Vec<f64>> {
    if config.samples_per_subcategory == 0 || config.base_len == 0 {
        return Err(CoreError::Config("bias estimation needs samples and a base length".into()));
    }
    let spec = PersonaSpec { alpha: 0.0, length: config.base_len, init_len: 0 };
    let mut control = ControlSession;
    (0..universe.subcategory_count())
        .map(|j| {
            let mut total = 0.0;
            for s in 0..config.samples_per_subcategory {
                let pseed = derive_seed(seed, "bias", ((j as u64) << 32) | s as u64);
                let base = build_persona(model, universe, &spec, sample_user_type(model, pseed), &mut control, pseed)?;
                let before = loss.loss(universe, &base.visits)?;
                let mut rng = crate::rng::stream(pseed, "bias/url", 0);
                let mut visits = base.visits;
                visits.push(Visit { url: uniform(universe.intent_urls(j), &mut rng), source: Source::Obfuscation });
                total += loss.loss(universe, &visits)? - before;
            }
            Ok(total / config.samples_per_subcategory as f64)
        })
        .collect()
}

pub fn estimate_bias_weights(
    universe: &UrlUniverse,
    model: &McModel,
    loss: &dyn LossModel,
    config: &BiasEstimation,
    seed: u64,
) -> Result<BiasWeights> {
    let rewards = average_insertion_rewards(universe, model, loss, config, seed)?;
    Ok(BiasWeights::from_rewards(&rewards)?.0)
}

#[derive(Default)]
pub struct BiasIntent {
    weights: Option<BiasWeights>,
}

impl BiasIntent {
    pub fn new(weights: Option<BiasWeights>) -> Self {
        Self { weights }
    }
}

impl Obfuscator for BiasIntent {
    fn name(&self) -> &str {
        "bias-intent"
    }

    fn selects_intents(&self) -> bool {
        true
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_> {
        Box::new(BiasSession(self.weights.as_ref()))
    }
}

struct BiasSession<'a>(Option<&'a BiasWeights>);

impl ObfuscationSession for BiasSession<'_> {
    fn select(&mut self, universe: &UrlUniverse, _: &[Visit], rng: &mut SimRng) -> Result<UrlId> {
        let w = self
            .0
            .ok_or_else(|| CoreError::SelectorNotReady("bias-intent".into(), "bias weights have not been estimated".into()))?;
        if w.weights.len() != universe.subcategory_count() {
            return Err(CoreError::InvalidInput(format!(
                "bias weights cover {} subcategories, universe has {}",
                w.weights.len(),
                universe.subcategory_count()
            )));
        }
        let mut x = rng.random_range(0.0..1.0) * w.weights.iter().sum::<f64>();
        let mut pick = w.weights.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (j, p) in w.weights.iter().enumerate() {
            if x < *p {
                pick = j;
                break;
            }
            x -= p;
        }
        Ok(uniform(universe.intent_urls(pick), rng))
    }
}

/// Registry holding control and the four baselines.
pub fn baseline_registry(bias: Option<BiasWeights>) -> SelectorRegistry {
    let mut r = SelectorRegistry::new();
    let entries: [Arc<dyn Obfuscator>; 5] =
        [Arc::new(Control), Arc::new(PoolSelector::adnauseam()), Arc::new(PoolSelector::trackthis()), Arc::new(RandIntent), Arc::new(BiasIntent::new(bias))];
    for e in entries {
        r.insert(e);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_from_planted_rewards() {
        let mut rewards = vec![1.0; 193];
        rewards[4] = 3.0;
        let (w, fallback) = BiasWeights::from_rewards(&rewards).unwrap();
        assert!(!fallback);
        assert!((w.weights[4] - 3.0 / 195.0).abs() < 1e-15);
        let (u, fallback) = BiasWeights::from_rewards(&[0.2; 5]).unwrap();
        assert!(!fallback);
        assert!(u.weights.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let (z, fallback) = BiasWeights::from_rewards(&[-1.0, 0.0]).unwrap();
        assert!(fallback);
        assert_eq!(z.weights, vec![0.5, 0.5]);
        let (f, _) = BiasWeights::from_rewards(&[-1.0, 1.0]).unwrap();
        assert_eq!(f.weights, vec![0.0, 1.0]);
    }

    #[test]
    fn weights_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bias.json");
        let w = BiasWeights { weights: (0..12).map(|i| i as f64 / 66.0).collect() };
        w.save(&path).unwrap();
        assert_eq!(BiasWeights::load(&path).unwrap(), w);
    }

    #[test]
    fn registry_lookup() {
        let r = baseline_registry(None);
        assert_eq!(r.names(), vec!["adnauseam", "bias-intent", "control", "rand-intent", "trackthis"]);
        assert_eq!(r.get("control").unwrap().forced_alpha(), Some(0.0));
        let err = r.get("harpo").err().unwrap().to_string();
        assert!(err.contains("harpo") && err.contains("rand-intent"), "{err}");
    }
}
