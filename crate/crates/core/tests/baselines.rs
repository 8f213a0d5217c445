use std::sync::OnceLock;

use obfusim_core::baselines::*;
use obfusim_core::envgen::*;
use obfusim_core::persona::{McModel, STATES};
use obfusim_core::rlagent::PlantedLoss;
use obfusim_core::rng::stream;
use obfusim_core::selector::Obfuscator;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn universe() -> &'static UrlUniverse {
    static U: OnceLock<UrlUniverse> = OnceLock::new();
    U.get_or_init(|| UrlUniverse::build(&UniverseConfig::desk(), 6).unwrap())
}

fn model() -> McModel {
    McModel::from_transition([[0.25; STATES]; STATES], vec![[0, 1, 2], [3, 4, 5]], 16).unwrap()
}

fn subcategory(u: &UrlUniverse, id: UrlId) -> usize {
    match u.kind(id) {
        UrlKind::Intent { subcategory } => usize::from(subcategory),
        other => panic!("expected an intent url, got {other:?}"),
    }
}

/// Upper-tail p-value of Pearson's statistic against expected frequencies.
fn chi_square_p(counts: &[usize], expected: &[f64]) -> f64 {
    let (mut stat, mut cells) = (0.0, 0usize);
    for (c, e) in counts.iter().zip(expected) {
        if *e > 0.0 {
            stat += (*c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(*c, 0, "draw in a zero-probability cell");
        }
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

fn draw_counts(sel: &dyn Obfuscator, n: usize, seed: u64) -> Vec<usize> {
    let u = universe();
    let mut counts = vec![0; u.subcategory_count()];
    let mut session = sel.session();
    let mut rng = stream(seed, "draws", 0);
    for _ in 0..n {
        counts[subcategory(u, session.select(u, &[], &mut rng).unwrap())] += 1;
    }
    counts
}

#[test]
fn rand_intent_is_uniform_over_subcategories() {
    let n = 100_000;
    let counts = draw_counts(&RandIntent, n, 1);
    let k = counts.len();
    let p = chi_square_p(&counts, &vec![n as f64 / k as f64; k]);
    assert!(p > 0.001, "uniformity rejected, p = {p}");
}

#[test]
fn bias_intent_follows_its_weights() {
    let u = universe();
    let k = u.subcategory_count();
    let raw: Vec<f64> = (0..k).map(|j| if j % 7 == 0 { 0.0 } else { 1.0 + (j % 5) as f64 }).collect();
    let (w, _) = BiasWeights::from_rewards(&raw).unwrap();
    let n = 100_000;
    let counts = draw_counts(&BiasIntent::new(Some(w.clone())), n, 2);
    let expected: Vec<f64> = w.weights.iter().map(|p| p * n as f64).collect();
    let p = chi_square_p(&counts, &expected);
    assert!(p > 0.001, "bias weights rejected, p = {p}");
}

#[test]
fn pool_selectors_stay_in_their_pools() {
    let u = universe();
    let mut rng = stream(3, "pools", 0);
    for (sel, pool) in [(PoolSelector::adnauseam(), u.ad_pool()), (PoolSelector::trackthis(), u.trackthis_pool())] {
        let mut s = sel.session();
        for _ in 0..2000 {
            assert!(pool.contains(&s.select(u, &[], &mut rng).unwrap()));
        }
    }
}

#[test]
fn control_and_unestimated_bias_refuse_to_select() {
    let u = universe();
    let mut rng = stream(4, "refuse", 0);
    assert!(Control.session().select(u, &[], &mut rng).is_err());
    assert!(BiasIntent::new(None).session().select(u, &[], &mut rng).is_err());
    let short = BiasWeights { weights: vec![1.0; 3] };
    assert!(BiasIntent::new(Some(short)).session().select(u, &[], &mut rng).is_err());
}

#[test]
fn planted_loss_concentrates_bias_weights() {
    let u = universe();
    let m = model();
    let cfg = BiasEstimation { samples_per_subcategory: 3, base_len: 10 };
    let rewards = average_insertion_rewards(u, &m, &PlantedLoss { subcategory: 17 }, &cfg, 5).unwrap();
    assert_eq!(rewards.len(), u.subcategory_count());
    assert_eq!(rewards[17], 1.0);
    assert!(rewards.iter().enumerate().all(|(j, r)| j == 17 || *r == 0.0));
    let w = estimate_bias_weights(u, &m, &PlantedLoss { subcategory: 17 }, &cfg, 5).unwrap();
    assert_eq!(w.weights[17], 1.0);
}

#[test]
fn registry_resolves_every_baseline_by_name() {
    let r = baseline_registry(Some(BiasWeights { weights: vec![1.0] }));
    for name in ["control", "adnauseam", "trackthis", "rand-intent", "bias-intent"] {
        assert_eq!(r.get(name).unwrap().name(), name);
    }
    assert!(r.get("rand-intent").unwrap().selects_intents());
    assert!(!r.get("adnauseam").unwrap().selects_intents());
}
