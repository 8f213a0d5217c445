//! Softmax and the cross-entropy / policy-gradient terms built on it.

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Weighted cross-entropy of `softmax(logits)` against class `target`.
/// Returns `(loss, dloss/dlogits)`.
pub fn cross_entropy(logits: &[f64], target: usize, weight: f64) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|lp| weight * lp.exp()).collect();
    grad[target] -= weight;
    (-weight * logp[target], grad)
}

/// Shannon entropy (nats) of a distribution given by its logits, and its
/// gradient with respect to the logits.
pub fn entropy(logits: &[f64]) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let h: f64 = -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
    // dH/dz_i = -p_i (log p_i + H)
    let grad = logp.iter().map(|lp| -lp.exp() * (lp + h)).collect();
    (h, grad)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|x| *x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn entropy_gradient_matches_differences(logits in prop::collection::vec(-3.0f64..3.0, 2..8)) {
            let (_, g) = entropy(&logits);
            let h = 1e-6;
            for i in 0..logits.len() {
                let mut up = logits.clone();
                up[i] += h;
                let mut dn = logits.clone();
                dn[i] -= h;
                let num = (entropy(&up).0 - entropy(&dn).0) / (2.0 * h);
                prop_assert!((num - g[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn cross_entropy_of_certain_prediction() {
        let (loss, grad) = cross_entropy(&[100.0, 0.0], 0, 1.0);
        assert!(loss < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn uniform_entropy_is_log_n() {
        let (h, _) = entropy(&[0.0; 193]);
        assert!((h - (193f64).ln()).abs() < 1e-12);
    }
}
