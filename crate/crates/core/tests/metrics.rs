use obfusim_core::metrics::*;
use obfusim_core::CoreError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(code: u32, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((code >> i) & 1) as u8).collect()
}

// Independent enumeration over set membership rather than vector arithmetic.
fn l1_by_sets(o: &[u8], u: &[u8]) -> Option<f64> {
    let triggered: Vec<usize> = (0..o.len()).filter(|&i| o[i] == 1).collect();
    if triggered.is_empty() {
        return None;
    }
    let fake = triggered.iter().filter(|&&i| u[i] == 0).count();
    Some(fake as f64 / triggered.len() as f64)
}

fn l2_by_sets(o: &[u8], u: &[u8]) -> usize {
    let so: std::collections::HashSet<usize> = (0..o.len()).filter(|&i| o[i] == 1).collect();
    let su: std::collections::HashSet<usize> = (0..u.len()).filter(|&i| u[i] == 1).collect();
    so.symmetric_difference(&su).count()
}

#[test]
fn l1_l2_match_enumeration_over_all_length_six_pairs() {
    let mut pairs = 0;
    for a in 0..64u32 {
        for b in 0..64u32 {
            let (o, u) = (bits(a, 6), bits(b, 6));
            match (l1(&o, &u), l1_by_sets(&o, &u)) {
                (Ok(x), Some(y)) => assert_eq!(x, y, "{o:?} {u:?}"),
                (Err(CoreError::Undefined(_)), None) => {}
                other => panic!("l1 disagrees on {o:?} {u:?}: {other:?}"),
            }
            assert_eq!(l2(&o, &u).unwrap(), l2_by_sets(&o, &u));
            pairs += 1;
        }
    }
    assert_eq!(pairs, 4096);
}

#[test]
fn l3_l4_match_direct_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..30);
        let bo: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let bu: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut acc = 0.0;
        for i in 0..n {
            acc += f64::from(bo[i]) - f64::from(bu[i]);
        }
        assert_eq!(l3(&bo, &bu).unwrap(), acc / n as f64);

        let vo: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
        let vu: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
        let (mut so, mut su) = (0.0, 0.0);
        for i in 0..n {
            so += vo[i];
            su += vu[i];
        }
        assert_eq!(l4(&vo, &vu).unwrap(), so / su);
    }
}

#[test]
fn worked_examples() {
    assert_eq!(l1(&[1, 1, 0, 0], &[0, 1, 0, 0]).unwrap(), 0.5);
    assert_eq!(l1(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
    assert_eq!(l2(&[1, 0, 1], &[0, 0, 1]).unwrap(), 1);
    assert!((l3(&[1, 1, 0], &[0, 1, 0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(l3(&[], &[]).is_err());
    assert!(l1(&[1], &[1, 0]).is_err());
    assert_eq!(reward(0.5, 0.2, 3, 0.1), 0.5 - 0.2 - 0.2);
}

#[test]
fn personalized_split_counts_each_side() {
    let p = Personalization { allowed: vec![0, 1, 2], disallowed: vec![3, 4], disallowed_weight: 0.1 };
    let s = personalized_split(&[1, 1, 0, 1, 0], &[0, 1, 1, 0, 0], &p).unwrap();
    assert_eq!((s.allowed, s.disallowed), (2, 1));
    assert!((personalized_l2(&[1, 1, 0, 1, 0], &[0, 1, 1, 0, 0], &p).unwrap() - 1.9).abs() < 1e-12);
    let overlap = Personalization { allowed: vec![0], disallowed: vec![0], disallowed_weight: 0.1 };
    assert!(overlap.validate(None).is_err());
}

fn binary(n: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..2, n)
}

proptest! {
    #[test]
    fn losses_stay_in_range((o, u) in (1usize..40).prop_flat_map(|n| (binary(n), binary(n)))) {
        if let Ok(v) = l1(&o, &u) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let s = l2_split(&o, &u).unwrap();
        prop_assert!(s.total <= o.len());
        prop_assert_eq!(s.total, s.new + s.removed);
        let v3 = l3(&o, &u).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v3));
        prop_assert_eq!(l2(&o, &o).unwrap(), 0);
        prop_assert_eq!(l3(&o, &o).unwrap(), 0.0);
    }

    #[test]
    fn identical_bids_have_unit_ratio(v in proptest::collection::vec(0.01f64..10.0, 1..20)) {
        prop_assert!((l4(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undiscounted_rewards_telescope(losses in proptest::collection::vec(0.0f64..1.0, 2..30)) {
        let total: f64 = losses.windows(2).map(|w| reward(w[1], w[0], 1, 0.0)).sum();
        let direct = losses[losses.len() - 1] - losses[0];
        prop_assert!((total - direct).abs() < 1e-12);
    }
}
