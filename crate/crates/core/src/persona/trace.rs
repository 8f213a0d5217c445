use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envgen::{UrlId, UrlKind, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceVisit {
    pub url: UrlId,
    pub category: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowsingTrace {
    pub user_id: u64,
    pub visits: Vec<TraceVisit>,
}

#[derive(Deserialize, Serialize)]
struct TraceRecord {
    user_id: u64,
    seq_no: u64,
    url_id: u32,
    category: u16,
}

/// Reads `user_id,seq_no,url_id,category` rows. Visits are ordered by
/// `seq_no` within each user, users by id.
pub fn read_traces_csv<R: Read>(reader: R, categories: usize) -> Result<Vec<BrowsingTrace>> {
    let mut by_user: BTreeMap<u64, Vec<(u64, TraceVisit)>> = BTreeMap::new();
    for (line, rec) in csv::Reader::from_reader(reader).deserialize::<TraceRecord>().enumerate() {
        let rec = rec?;
        if usize::from(rec.category) >= categories {
            return Err(CoreError::InvalidInput(format!(
                "trace row {}: category {} outside the {categories}-category vocabulary",
                line + 2,
                rec.category
            )));
        }
        by_user.entry(rec.user_id).or_default().push((rec.seq_no, TraceVisit { url: UrlId(rec.url_id), category: rec.category }));
    }
    Ok(by_user
        .into_iter()
        .map(|(user_id, mut v)| {
            v.sort_by_key(|(seq, _)| *seq);
            BrowsingTrace { user_id, visits: v.into_iter().map(|(_, visit)| visit).collect() }
        })
        .collect())
}

pub fn write_traces_csv<W: Write>(writer: W, traces: &[BrowsingTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in traces {
        for (seq_no, v) in t.visits.iter().enumerate() {
            w.serialize(TraceRecord { user_id: t.user_id, seq_no: seq_no as u64, url_id: v.url.0, category: v.category })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceConfig {
    pub users: usize,
    pub visits_per_user: usize,
    pub zipf_exponent: f64,
    /// Probability of staying in the current category for the next visit.
    pub stickiness: f64,
}

impl Default for SyntheticTraceConfig {
    fn default() -> Self {
        Self { users: 2000, visits_per_user: 200, zipf_exponent: 1.0, stickiness: 0.5 }
    }
}

fn weighted_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Users rank the categories by Plackett–Luce draws from a global Zipf
/// popularity, then browse with Zipf preferences over their own ranking and
/// a fixed probability of staying in the current category.
pub fn generate_traces(universe: &UrlUniverse, config: &SyntheticTraceConfig, seed: u64) -> Result<Vec<BrowsingTrace>> {
    if config.users == 0 || config.visits_per_user < 2 {
        return Err(CoreError::Config("synthetic traces need at least one user and two visits each".into()));
    }
    if !(0.0..1.0).contains(&config.stickiness) || !(config.zipf_exponent >= 0.0) {
        return Err(CoreError::Config("stickiness must lie in [0, 1) and the Zipf exponent be nonnegative".into()));
    }
    let k = universe.user_category_count();
    let zipf: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-config.zipf_exponent)).collect();
    Ok((0..config.users)
        .map(|u| {
            let mut rng = stream(seed, "traces/user", u as u64);
            let mut remaining: Vec<usize> = (0..k).collect();
            let mut ranking = Vec::with_capacity(k);
            while !remaining.is_empty() {
                let weights: Vec<f64> = remaining.iter().map(|c| zipf[*c]).collect();
                ranking.push(remaining.remove(weighted_index(&weights, &mut rng)));
            }
            let mut category = ranking[weighted_index(&zipf, &mut rng)];
            let visits = (0..config.visits_per_user)
                .map(|i| {
                    if i > 0 && !rng.random_bool(config.stickiness) {
                        category = ranking[weighted_index(&zipf, &mut rng)];
                    }
                    let urls = universe.user_urls(category);
                    let url = urls[rng.random_range(0..urls.len())];
                    debug_assert_eq!(universe.kind(url), UrlKind::User { category: category as u16 });
                    TraceVisit { url, category: category as u16 }
                })
                .collect();
            BrowsingTrace { user_id: u as u64, visits }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::UniverseConfig;

    #[test]
    fn csv_round_trip_and_ordering() {
        let text = "user_id,seq_no,url_id,category\n2,1,5,1\n1,0,3,0\n2,0,4,1\n";
        let traces = read_traces_csv(text.as_bytes(), 16).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[1].visits.iter().map(|v| v.url.0).collect::<Vec<_>>(), vec![4, 5]);
        let mut out = Vec::new();
        write_traces_csv(&mut out, &traces).unwrap();
        assert_eq!(read_traces_csv(out.as_slice(), 16).unwrap(), traces);
        assert!(read_traces_csv("user_id,seq_no,url_id,category\n1,0,0,16\n".as_bytes(), 16).is_err());
    }

    #[test]
    fn synthetic_traces_are_deterministic() {
        let u = UrlUniverse::build(&UniverseConfig { dim: 4, ..UniverseConfig::desk() }, 0).unwrap();
        let cfg = SyntheticTraceConfig { users: 5, visits_per_user: 30, ..Default::default() };
        let a = generate_traces(&u, &cfg, 1).unwrap();
        assert_eq!(a, generate_traces(&u, &cfg, 1).unwrap());
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|t| t.visits.len() == 30 && t.visits.iter().all(|v| v.category < 16)));
    }
}
