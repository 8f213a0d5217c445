//! Privacy losses between an obfuscated profile and its base profile, bid
//! classing, and the per-step reward.

use std::collections::BTreeSet;
use std::io::Write;

use obfusim_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tracker::Tracker;

fn same_len<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::InvalidInput(format!("vector lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Fraction of the obfuscated profile's segments that the base profile lacks.
/// Undefined when the obfuscated profile triggers nothing.
pub fn l1(obfuscated: &[u8], base: &[u8]) -> Result<f64> {
    same_len(obfuscated, base)?;
    let on = obfuscated.iter().filter(|x| **x == 1).count();
    if on == 0 {
        return Err(CoreError::Undefined("L1 with no triggered segments"));
    }
    let wrong = obfuscated.iter().zip(base).filter(|(o, u)| **o == 1 && **u == 0).count();
    Ok(wrong as f64 / on as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct L2Split {
    pub total: usize,
    /// Segments present only in the obfuscated profile.
    pub new: usize,
    /// Segments present only in the base profile.
    pub removed: usize,
}

pub fn l2(obfuscated: &[u8], base: &[u8]) -> Result<usize> {
    Ok(l2_split(obfuscated, base)?.total)
}

pub fn l2_split(obfuscated: &[u8], base: &[u8]) -> Result<L2Split> {
    same_len(obfuscated, base)?;
    let mut split = L2Split::default();
    for (o, u) in obfuscated.iter().zip(base) {
        match (*o, *u) {
            (1, 0) => split.new += 1,
            (0, 1) => split.removed += 1,
            _ => {}
        }
    }
    split.total = split.new + split.removed;
    Ok(split)
}

/// Mean increase in the share of high bids.
pub fn l3(obfuscated: &[u8], base: &[u8]) -> Result<f64> {
    same_len(obfuscated, base)?;
    if obfuscated.is_empty() {
        return Err(CoreError::InvalidInput("L3 needs at least one bidder".into()));
    }
    let diff: i64 = obfuscated.iter().zip(base).map(|(o, u)| i64::from(*o) - i64::from(*u)).sum();
    Ok(diff as f64 / obfuscated.len() as f64)
}

/// Ratio of total bid value.
pub fn l4(obfuscated: &[f64], base: &[f64]) -> Result<f64> {
    same_len(obfuscated, base)?;
    if obfuscated.iter().chain(base).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(CoreError::InvalidInput("bid values must be positive and finite".into()));
    }
    let den: f64 = base.iter().sum();
    if den <= 0.0 {
        return Err(CoreError::InvalidInput("L4 denominator is zero".into()));
    }
    Ok(obfuscated.iter().sum::<f64>() / den)
}

/// `r_t = L_t − L_{t−1} − δ (N(p) − 1)` where `repeat_count` is N(p) ≥ 1.
pub fn reward(loss_now: f64, loss_prev: f64, repeat_count: u32, delta: f64) -> f64 {
    debug_assert!(repeat_count >= 1, "repeat count includes the current selection");
    loss_now - loss_prev - delta * f64::from(repeat_count.saturating_sub(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Personalization {
    pub allowed: Vec<usize>,
    pub disallowed: Vec<usize>,
    pub disallowed_weight: f64,
}

impl Personalization {
    pub fn validate(&self, segment_count: Option<usize>) -> Result<()> {
        if !(self.disallowed_weight >= 0.0 && self.disallowed_weight.is_finite()) {
            return Err(CoreError::Config("disallowed weight must be finite and nonnegative".into()));
        }
        let allowed: BTreeSet<usize> = self.allowed.iter().copied().collect();
        if let Some(i) = self.disallowed.iter().find(|i| allowed.contains(i)) {
            return Err(CoreError::Config(format!("segment {i} is both allowed and disallowed")));
        }
        if let Some(n) = segment_count {
            if let Some(i) = self.allowed.iter().chain(&self.disallowed).find(|i| **i >= n) {
                return Err(CoreError::Config(format!("segment index {i} out of range for {n} segments")));
            }
        }
        Ok(())
    }
}

fn restricted_l2(obfuscated: &[u8], base: &[u8], indices: &[usize]) -> Result<usize> {
    indices
        .iter()
        .map(|i| match (obfuscated.get(*i), base.get(*i)) {
            (Some(o), Some(u)) => Ok(usize::from(o != u)),
            _ => Err(CoreError::InvalidInput(format!("segment index {i} out of range"))),
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedL2 {
    pub allowed: usize,
    pub disallowed: usize,
}

pub fn personalized_split(obfuscated: &[u8], base: &[u8], p: &Personalization) -> Result<PersonalizedL2> {
    same_len(obfuscated, base)?;
    p.validate(Some(obfuscated.len()))?;
    Ok(PersonalizedL2 {
        allowed: restricted_l2(obfuscated, base, &p.allowed)?,
        disallowed: restricted_l2(obfuscated, base, &p.disallowed)?,
    })
}

/// `L2^allowed − w_d · L2^disallowed`.
pub fn personalized_l2(obfuscated: &[u8], base: &[u8], p: &Personalization) -> Result<f64> {
    let s = personalized_split(obfuscated, base, p)?;
    Ok(s.allowed as f64 - p.disallowed_weight * s.disallowed as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    L1,
    L2,
    L3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub loss: LossKind,
    pub delta: f64,
    #[serde(default)]
    pub personalization: Option<Personalization>,
}

impl RewardSpec {
    pub fn new(loss: LossKind, delta: f64) -> Self {
        Self { loss, delta, personalization: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(CoreError::Config(format!("delta must be finite and nonnegative, got {}", self.delta)));
        }
        if let Some(p) = &self.personalization {
            p.validate(None)?;
        }
        Ok(())
    }

    /// Loss between two windows as seen by `tracker`. `None` stands for an
    /// undefined L1.
    pub fn loss(&self, tracker: &dyn Tracker, obfuscated: &Tensor, base: &Tensor) -> Result<Option<f64>> {
        if let Some(p) = &self.personalization {
            let xo = tracker.segments(obfuscated)?;
            let xu = tracker.segments(base)?;
            return personalized_l2(&xo, &xu, p).map(Some);
        }
        match self.loss {
            LossKind::L1 => match l1(&tracker.segments(obfuscated)?, &tracker.segments(base)?) {
                Ok(v) => Ok(Some(v)),
                Err(CoreError::Undefined(_)) => Ok(None),
                Err(e) => Err(e),
            },
            LossKind::L2 => Ok(Some(l2(&tracker.segments(obfuscated)?, &tracker.segments(base)?)? as f64)),
            LossKind::L3 => Ok(Some(l3(&tracker.bid_classes(obfuscated)?, &tracker.bid_classes(base)?)?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub persona_id: usize,
    pub metric: String,
    pub value: Option<f64>,
    pub excluded: bool,
}

/// Writes `run_id,persona_id,metric,value,excluded` rows; excluded rows have an empty value.
pub fn write_metric_rows<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run_id", "persona_id", "metric", "value", "excluded"])?;
    for r in rows {
        let value = r.value.map(|v| format!("{v}")).unwrap_or_default();
        w.write_record([r.run_id.as_str(), &r.persona_id.to_string(), r.metric.as_str(), &value, if r.excluded { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}
