use std::path::Path;

use obfusim_nn::Tensor;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::universe::{cosine, normalize, random_unit, UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::rng::{hash_f64s, stream, SimRng};
use crate::tracker::Tracker;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub window: usize,
    pub segment_candidates: usize,
    pub bidder_candidates: usize,
    /// Mixing weights of a target prototype: anchor user category, intent
    /// subcategories, and free noise direction.
    pub user_weight: f64,
    pub intent_weight: f64,
    pub noise_weight: f64,
    pub intents_per_target: usize,
    /// Each segment's positive rate on calibration personas is drawn from this range.
    pub positive_rate_range: (f64, f64),
    pub calibration_personas: usize,
    pub calibration_alpha_max: f64,
    pub bid_base_range: (f64, f64),
    pub bid_interest_scale: f64,
    pub bid_noise: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl OracleConfig {
    pub fn desk() -> Self {
        Self {
            window: 5,
            segment_candidates: 40,
            bidder_candidates: 20,
            user_weight: 0.6,
            intent_weight: 1.0,
            noise_weight: 0.3,
            intents_per_target: 2,
            positive_rate_range: (0.06, 0.15),
            calibration_personas: 10_000,
            calibration_alpha_max: 0.2,
            bid_base_range: (0.1, 1.0),
            bid_interest_scale: 4.0,
            bid_noise: 0.15,
        }
    }

    pub fn paper() -> Self {
        Self { window: 20, segment_candidates: 121, bidder_candidates: 55, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.positive_rate_range;
        if self.window == 0 || self.segment_candidates == 0 || self.bidder_candidates == 0 || self.calibration_personas < 2 {
            return Err(CoreError::Config("oracle window, candidate counts and calibration size must be positive".into()));
        }
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(CoreError::Config(format!("positive_rate_range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
        }
        if !(0.0..1.0).contains(&self.calibration_alpha_max) {
            return Err(CoreError::Config("calibration_alpha_max must lie in [0, 1)".into()));
        }
        let (blo, bhi) = self.bid_base_range;
        if !(0.0 < blo && blo <= bhi) || self.bid_noise < 0.0 {
            return Err(CoreError::Config("bid base range must be positive and bid noise nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOracle {
    pub id: usize,
    pub prototype: Vec<f64>,
    pub threshold: f64,
    pub anchor_category: usize,
    pub intents: Vec<usize>,
}

impl SegmentOracle {
    /// Mean cosine similarity of the window rows to the prototype. Zero rows count as zero.
    pub fn score(&self, window: &Tensor) -> f64 {
        let rows = window.shape()[0];
        (0..rows).map(|r| cosine(window.row(r), &self.prototype)).sum::<f64>() / rows as f64
    }

    pub fn triggered(&self, window: &Tensor) -> u8 {
        u8::from(self.score(window) >= self.threshold)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidderOracle {
    pub id: usize,
    pub base_value: f64,
    pub weights: Vec<f64>,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub mean: f64,
    pub std: f64,
    pub anchor_category: usize,
    pub intents: Vec<usize>,
}

impl BidderOracle {
    /// CPM bid: `base · exp(weights · mean(window rows) + noise)`, the noise
    /// being a seeded function of the window content.
    pub fn value(&self, window: &Tensor) -> f64 {
        let rows = window.shape()[0];
        let d = self.weights.len();
        let interest = (0..rows).map(|r| obfusim_nn::dot(&window.row(r)[..d], &self.weights)).sum::<f64>() / rows as f64;
        let noise = if self.noise_sigma > 0.0 {
            let mut rng = SimRng::seed_from_u64(hash_f64s(self.noise_seed, window.data()));
            self.noise_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        self.base_value * (interest + noise).exp()
    }

    pub fn threshold(&self) -> f64 {
        self.mean + self.std
    }

    pub fn class_of(&self, value: f64) -> u8 {
        u8::from(value >= self.threshold())
    }
}

/// A random browsing window for calibration: a sticky four-state walk over
/// three favoured categories and the rest, with intent visits at a random budget.
pub fn random_persona_window(universe: &UrlUniverse, w: usize, alpha_max: f64, rng: &mut SimRng) -> Vec<UrlId> {
    const STAY: f64 = 0.65;
    const STATE_SHARE: [f64; 4] = [0.3, 0.15, 0.1, 0.45];
    let categories: Vec<usize> = (0..universe.user_category_count()).collect();
    let favoured: Vec<usize> = categories.choose_multiple(rng, 3.min(categories.len())).copied().collect();
    let alpha = if alpha_max > 0.0 { rng.random_range(0.0..alpha_max) } else { 0.0 };
    let draw_state = |rng: &mut SimRng| {
        let mut x: f64 = rng.random();
        STATE_SHARE.iter().position(|p| {
            x -= p;
            x < 0.0
        }).unwrap_or(3)
    };
    let mut state = draw_state(rng);
    (0..w)
        .map(|i| {
            if rng.random_bool(alpha) {
                let j = rng.random_range(0..universe.subcategory_count());
                return *universe.intent_urls(j).choose(rng).expect("nonempty subcategory");
            }
            if i > 0 && !rng.random_bool(STAY) {
                state = draw_state(rng);
            }
            let category = match favoured.get(state) {
                Some(c) if state < 3 => *c,
                _ => loop {
                    let c = categories[rng.random_range(0..categories.len())];
                    if !favoured.contains(&c) || favoured.len() == categories.len() {
                        break c;
                    }
                },
            };
            *universe.user_urls(category).choose(rng).expect("nonempty category")
        })
        .collect()
}

fn target_prototype(universe: &UrlUniverse, config: &OracleConfig, rng: &mut SimRng) -> (Vec<f64>, usize, Vec<usize>) {
    let anchor = rng.random_range(0..universe.user_category_count());
    let candidates: Vec<usize> = (0..universe.subcategory_count()).filter(|j| universe.intent_parent(*j) != anchor || universe.user_category_count() == 1).collect();
    let intents: Vec<usize> = candidates.choose_multiple(rng, config.intents_per_target.min(candidates.len())).copied().collect();
    let noise = random_unit(universe.dim(), rng);
    let mut proto: Vec<f64> = universe.user_prototype(anchor).iter().zip(&noise).map(|(u, n)| config.user_weight * u + config.noise_weight * n).collect();
    if !intents.is_empty() {
        let scale = config.intent_weight / (intents.len() as f64).sqrt();
        for j in &intents {
            proto.iter_mut().zip(universe.intent_prototype(*j)).for_each(|(p, q)| *p += scale * q);
        }
    }
    normalize(&mut proto);
    (proto, anchor, intents)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSet {
    pub window: usize,
    pub segments: Vec<SegmentOracle>,
    pub bidders: Vec<BidderOracle>,
}

impl OracleSet {
    /// Builds the candidate oracles and calibrates segment thresholds and bid
    /// statistics on seeded random persona windows.
    pub fn build(universe: &UrlUniverse, config: &OracleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = config.window;
        let mut rng = stream(seed, "oracles/targets", 0);
        let mut segments: Vec<SegmentOracle> = (0..config.segment_candidates)
            .map(|id| {
                let (prototype, anchor_category, intents) = target_prototype(universe, config, &mut rng);
                SegmentOracle { id, prototype, threshold: 0.0, anchor_category, intents }
            })
            .collect();
        let mut bidders: Vec<BidderOracle> = (0..config.bidder_candidates)
            .map(|id| {
                let (unit, anchor_category, intents) = target_prototype(universe, config, &mut rng);
                let base_value = rng.random_range(config.bid_base_range.0..=config.bid_base_range.1);
                BidderOracle {
                    id,
                    base_value,
                    weights: unit.iter().map(|x| x * config.bid_interest_scale).collect(),
                    noise_sigma: config.bid_noise,
                    noise_seed: rng.random(),
                    mean: 0.0,
                    std: 0.0,
                    anchor_category,
                    intents,
                }
            })
            .collect();

        let mut cal_rng = stream(seed, "oracles/calibration", 0);
        let windows: Vec<Tensor> = (0..config.calibration_personas)
            .map(|_| universe.window(&random_persona_window(universe, w, config.calibration_alpha_max, &mut cal_rng), w))
            .collect();
        let (lo, hi) = config.positive_rate_range;
        for seg in &mut segments {
            let rate = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let mut scores: Vec<f64> = windows.iter().map(|c| seg.score(c)).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let k = ((rate * scores.len() as f64).round() as usize).clamp(1, scores.len()) - 1;
            seg.threshold = scores[k];
        }
        for bidder in &mut bidders {
            let values: Vec<f64> = windows.iter().map(|c| bidder.value(c)).collect();
            let n = values.len() as f64;
            bidder.mean = values.iter().sum::<f64>() / n;
            bidder.std = (values.iter().map(|v| (v - bidder.mean).powi(2)).sum::<f64>() / n).sqrt();
        }
        Ok(Self { window: w, segments, bidders })
    }

    /// The oracles behind the chosen segment and bidder ids, in the given order.
    pub fn subset(&self, segment_ids: &[usize], bidder_ids: &[usize]) -> Result<Self> {
        let pick_seg = |id: &usize| {
            self.segments.iter().find(|s| s.id == *id).cloned().ok_or_else(|| CoreError::InvalidInput(format!("no segment oracle {id}")))
        };
        let pick_bid = |id: &usize| {
            self.bidders.iter().find(|b| b.id == *id).cloned().ok_or_else(|| CoreError::InvalidInput(format!("no bidder oracle {id}")))
        };
        Ok(Self {
            window: self.window,
            segments: segment_ids.iter().map(pick_seg).collect::<Result<_>>()?,
            bidders: bidder_ids.iter().map(pick_bid).collect::<Result<_>>()?,
        })
    }

    fn check(&self, window: &Tensor) -> Result<()> {
        let d = self.segments.first().map(|s| s.prototype.len()).or_else(|| self.bidders.first().map(|b| b.weights.len())).unwrap_or(0);
        window.expect_shape(&[self.window, d])?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl Tracker for OracleSet {
    fn window(&self) -> usize {
        self.window
    }

    fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn bidder_count(&self) -> usize {
        self.bidders.len()
    }

    fn segments(&self, window: &Tensor) -> Result<Vec<u8>> {
        self.check(window)?;
        Ok(self.segments.iter().map(|s| s.triggered(window)).collect())
    }

    fn bid_classes(&self, window: &Tensor) -> Result<Vec<u8>> {
        self.check(window)?;
        Ok(self.bidders.iter().map(|b| b.class_of(b.value(window))).collect())
    }

    fn bid_values(&self, window: &Tensor) -> Result<Option<Vec<f64>>> {
        self.check(window)?;
        Ok(Some(self.bidders.iter().map(|b| b.value(window)).collect()))
    }
}
