use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// p-value of the one-sided t-test of `mean(diffs) > 0`.
pub fn one_sided_t_test(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 2 {
        return 1.0;
    }
    let m = mean(diffs);
    let se = std_error(diffs);
    if se == 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    1.0 - t.cdf(m / se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((std_dev(&xs) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn t_test_against_table() {
        // shifted so that t = 2.1318, the one-sided 5% point at 4 degrees of freedom
        let base = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let se = (0.625f64 / 5.0).sqrt();
        let diffs: Vec<f64> = base.iter().map(|d| d + 2.1318 * se).collect();
        let p = one_sided_t_test(&diffs);
        assert!((p - 0.05).abs() < 1e-3, "p = {p}");
        assert!(one_sided_t_test(&[-1.0, -2.0, -1.5]) > 0.9);
    }
}
