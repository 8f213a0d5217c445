use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::BrowsingTrace;
use crate::envgen::{UrlId, UrlUniverse};
use crate::error::{CoreError, Result};

pub const STATES: usize = 4;

/// The three most popular categories of a user, most popular first. They are
/// the first three chain states; every other category is the fourth.
pub type UserType = [u16; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub user_types: usize,
    /// A category is popular for a user when it holds more than this share of visits.
    pub popularity_share: f64,
    pub max_lag: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { user_types: 100, popularity_share: 0.1, max_lag: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McModel {
    pub categories: usize,
    pub transition: [[f64; STATES]; STATES],
    pub stationary: [f64; STATES],
    pub user_types: Vec<UserType>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDiagnostics {
    pub users: usize,
    pub transitions: usize,
    /// Users with fewer than three popular categories, padded by rank.
    pub padded_users: usize,
    /// Users with more than three popular categories, capped to three.
    pub capped_users: usize,
    /// Autocorrelation of the pooled state series at lags 1..=max_lag.
    pub autocorrelation: Vec<f64>,
    /// How many users carry each materialized user type.
    pub type_counts: Vec<usize>,
}

/// Categories ranked by visit count (ties by id); the first three form the
/// user type. Also reports how many categories pass the popularity share.
pub fn popular_categories(trace: &BrowsingTrace, categories: usize, share: f64) -> (UserType, usize) {
    let mut counts = vec![0usize; categories];
    for v in &trace.visits {
        counts[usize::from(v.category)] += 1;
    }
    let mut order: Vec<usize> = (0..categories).collect();
    order.sort_by(|a, b| counts[*b].cmp(&counts[*a]).then(a.cmp(b)));
    let popular = counts.iter().filter(|c| **c as f64 > share * trace.visits.len() as f64).count();
    ([order[0] as u16, order[1] as u16, order[2] as u16], popular)
}

pub fn state_of(user_type: &UserType, category: u16) -> usize {
    user_type.iter().position(|c| *c == category).unwrap_or(STATES - 1)
}

fn stationary_of(p: &[[f64; STATES]; STATES]) -> [f64; STATES] {
    let mut pi = [1.0 / STATES as f64; STATES];
    for _ in 0..100_000 {
        let mut next = [0.0; STATES];
        for i in 0..STATES {
            for j in 0..STATES {
                next[j] += pi[i] * p[i][j];
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if change < 1e-15 {
            break;
        }
    }
    pi
}

pub fn fit_mc(traces: &[BrowsingTrace], categories: usize, config: &FitConfig) -> Result<(McModel, McDiagnostics)> {
    if traces.is_empty() {
        return Err(CoreError::InvalidInput("fit_mc needs at least one trace".into()));
    }
    if categories < STATES {
        return Err(CoreError::Config(format!("need at least {STATES} categories, got {categories}")));
    }
    if config.user_types == 0 {
        return Err(CoreError::Config("user_types must be at least 1".into()));
    }
    let mut counts = [[1.0f64; STATES]; STATES];
    let mut type_freq: BTreeMap<UserType, usize> = BTreeMap::new();
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(traces.len());
    let (mut padded_users, mut capped_users, mut transitions) = (0, 0, 0);
    for t in traces {
        if t.visits.len() < 2 {
            return Err(CoreError::InvalidInput(format!("trace of user {} has fewer than two visits", t.user_id)));
        }
        if let Some(v) = t.visits.iter().find(|v| usize::from(v.category) >= categories) {
            return Err(CoreError::InvalidInput(format!("user {}: category {} out of range", t.user_id, v.category)));
        }
        let (user_type, popular) = popular_categories(t, categories, config.popularity_share);
        padded_users += usize::from(popular < 3);
        capped_users += usize::from(popular > 3);
        *type_freq.entry(user_type).or_default() += 1;
        let states: Vec<usize> = t.visits.iter().map(|v| state_of(&user_type, v.category)).collect();
        for pair in states.windows(2) {
            counts[pair[0]][pair[1]] += 1.0;
            transitions += 1;
        }
        series.push(states.iter().map(|s| *s as f64).collect());
    }
    let mut transition = [[0.0; STATES]; STATES];
    for i in 0..STATES {
        let row: f64 = counts[i].iter().sum();
        for j in 0..STATES {
            transition[i][j] = counts[i][j] / row;
        }
    }
    let mut ranked: Vec<(UserType, usize)> = type_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(config.user_types);
    let model = McModel {
        categories,
        transition,
        stationary: stationary_of(&transition),
        user_types: ranked.iter().map(|(t, _)| *t).collect(),
    };
    let diagnostics = McDiagnostics {
        users: traces.len(),
        transitions,
        padded_users,
        capped_users,
        autocorrelation: autocorrelation(&series, config.max_lag),
        type_counts: ranked.iter().map(|(_, n)| *n).collect(),
    };
    Ok((model, diagnostics))
}

fn autocorrelation(series: &[Vec<f64>], max_lag: usize) -> Vec<f64> {
    let n: usize = series.iter().map(Vec::len).sum();
    let mean = series.iter().flatten().sum::<f64>() / n as f64;
    let var: f64 = series.iter().flatten().map(|x| (x - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|lag| {
            if var == 0.0 {
                return 0.0;
            }
            let cov: f64 = series
                .iter()
                .filter(|s| s.len() > lag)
                .map(|s| s.iter().zip(&s[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>())
                .sum();
            cov / var
        })
        .collect()
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut x: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if x < *p {
            return i;
        }
        x -= p;
    }
    probs.len() - 1
}

impl McModel {
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CoreError::InvalidInput(format!("transition row {i} is not a distribution")));
            }
        }
        if self.user_types.is_empty() {
            return Err(CoreError::InvalidInput("model has no user types".into()));
        }
        if self.categories < STATES || self.user_types.iter().flatten().any(|c| usize::from(*c) >= self.categories) {
            return Err(CoreError::InvalidInput("user type references an unknown category".into()));
        }
        Ok(())
    }

    /// A model with the given matrix; the stationary distribution is recomputed.
    pub fn from_transition(transition: [[f64; STATES]; STATES], user_types: Vec<UserType>, categories: usize) -> Result<Self> {
        let model = Self { categories, transition, stationary: stationary_of(&transition), user_types };
        model.validate()?;
        Ok(model)
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw(&self.stationary, rng)
    }

    pub fn next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        draw(&self.transition[state], rng)
    }

    /// Uniform url of the state's category; the last state picks uniformly
    /// among the categories outside the user type first.
    pub fn url_for_state<R: Rng + ?Sized>(&self, universe: &UrlUniverse, user_type: &UserType, state: usize, rng: &mut R) -> UrlId {
        let category = if state < 3 {
            usize::from(user_type[state])
        } else {
            let others = self.categories - 3;
            let mut k = rng.random_range(0..others);
            let mut sorted = user_type.map(usize::from);
            sorted.sort_unstable();
            for c in sorted {
                if k >= c {
                    k += 1;
                }
            }
            k
        };
        let urls = universe.user_urls(category);
        urls[rng.random_range(0..urls.len())]
    }
}

/// The user side of a persona: walks the chain and emits user urls.
#[derive(Clone, Debug)]
pub struct UserWalker<'a> {
    model: &'a McModel,
    user_type: UserType,
    state: Option<usize>,
}

impl<'a> UserWalker<'a> {
    pub fn new(model: &'a McModel, user_type: UserType) -> Self {
        Self { model, user_type, state: None }
    }

    pub fn with_state(model: &'a McModel, user_type: UserType, state: usize) -> Self {
        Self { model, user_type, state: Some(state) }
    }

    pub fn state(&self) -> Option<usize> {
        self.state
    }

    /// Next state (stationary draw for the first visit) and a url from it.
    pub fn sample_user_url<R: Rng + ?Sized>(&mut self, universe: &UrlUniverse, rng: &mut R) -> (UrlId, usize) {
        let state = match self.state {
            None => self.model.initial_state(rng),
            Some(s) => self.model.next_state(s, rng),
        };
        self.state = Some(state);
        (self.model.url_for_state(universe, &self.user_type, state, rng), state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::trace::TraceVisit;

    fn trace(categories: &[u16]) -> BrowsingTrace {
        BrowsingTrace { user_id: 0, visits: categories.iter().map(|c| TraceVisit { url: UrlId(0), category: *c }).collect() }
    }

    #[test]
    fn alternating_trace() {
        let cats: Vec<u16> = (0..2000).map(|i| if i % 2 == 0 { 5 } else { 9 }).collect();
        let (m, d) = fit_mc(&[trace(&cats)], 16, &FitConfig::default()).unwrap();
        assert_eq!(m.user_types[0], [5, 9, 0]);
        assert!(m.transition[0][1] > 0.99 && m.transition[1][0] > 0.99);
        assert_eq!(d.padded_users, 1);
        assert!(d.autocorrelation[0] < -0.9);
    }

    #[test]
    fn single_category_trace() {
        let (m, _) = fit_mc(&[trace(&[3; 1000])], 16, &FitConfig::default()).unwrap();
        assert!(m.transition[0][0] > 0.99);
        assert!((m.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(fit_mc(&[], 16, &FitConfig::default()).is_err());
        assert!(fit_mc(&[trace(&[1])], 16, &FitConfig::default()).is_err());
    }

    #[test]
    fn ties_broken_by_id() {
        let (t, popular) = popular_categories(&trace(&[7, 2, 7, 2, 4, 4]), 16, 0.1);
        assert_eq!(t, [2, 4, 7]);
        assert_eq!(popular, 3);
    }

    #[test]
    fn other_state_skips_user_type() {
        let u = UrlUniverse::build(&crate::envgen::UniverseConfig { dim: 2, ..Default::default() }, 0).unwrap();
        let m = McModel::from_transition([[0.25; 4]; 4], vec![[0, 5, 15]], 16).unwrap();
        let mut rng = crate::rng::stream(0, "t", 0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..3000 {
            let id = m.url_for_state(&u, &[0, 5, 15], 3, &mut rng);
            if let crate::envgen::UrlKind::User { category } = u.kind(id) {
                seen.insert(category);
            }
        }
        assert_eq!(seen.len(), 13);
        assert!(!seen.contains(&0) && !seen.contains(&5) && !seen.contains(&15));
    }
}
