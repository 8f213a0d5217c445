use std::sync::Arc;

use crate::envgen::{UrlKind, UrlUniverse};
use crate::error::Result;
use crate::metrics::RewardSpec;
use crate::persona::{user_ids, McModel, Source, Visit};
use crate::tracker::Tracker;

/// Privacy loss of a partial persona, seen right after its last visit.
pub trait LossModel: Send + Sync {
    fn loss(&self, universe: &UrlUniverse, history: &[Visit]) -> Result<f64>;
}

/// Loss between the obfuscated window and the base window (the last `w`
/// user visits) as judged by a tracker. An undefined L1 counts as zero.
pub struct TrackerLoss {
    pub tracker: Arc<dyn Tracker>,
    pub spec: RewardSpec,
}

impl LossModel for TrackerLoss {
    fn loss(&self, universe: &UrlUniverse, history: &[Visit]) -> Result<f64> {
        let w = self.tracker.window();
        let ids: Vec<_> = history.iter().map(|v| v.url).collect();
        let obfuscated = universe.window(&ids, w);
        let base = universe.window(&user_ids(history), w);
        Ok(self.spec.loss(self.tracker.as_ref(), &obfuscated, &base)?.unwrap_or(0.0))
    }
}

/// Counts obfuscation visits that fall in one subcategory. Each such pick
/// raises the loss by exactly one, so that subcategory is the unique optimum.
pub struct PlantedLoss {
    pub subcategory: u16,
}

impl LossModel for PlantedLoss {
    fn loss(&self, universe: &UrlUniverse, history: &[Visit]) -> Result<f64> {
        Ok(history
            .iter()
            .filter(|v| v.source == Source::Obfuscation && universe.kind(v.url) == UrlKind::Intent { subcategory: self.subcategory })
            .count() as f64)
    }
}

#[derive(Clone, Copy)]
pub struct RlEnv<'a> {
    pub universe: &'a UrlUniverse,
    pub model: &'a McModel,
    pub loss: &'a dyn LossModel,
}
