use crate::error::Result;
use crate::objective::Objective;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Relative error with a small floor on the denominator so that entries
/// where both gradients vanish count as exact.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares every parameter's analytic gradient with a central finite
/// difference of step `epsilon`. Parameters are restored afterwards and
/// gradients are left cleared.
pub fn grad_check<M: Objective + ?Sized>(model: &mut M, sample: &M::Sample, epsilon: f64) -> Result<GradCheckReport> {
    model.zero_grad();
    model.forward(sample)?;
    model.backward()?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    model.zero_grad();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = orig + epsilon;
            let up = model.forward(sample)?;
            model.params_mut()[pi].value.data_mut()[k] = orig - epsilon;
            let down = model.forward(sample)?;
            model.params_mut()[pi].value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((pi, k));
            }
        }
    }
    // drop the record left by the last probe
    model.forward(sample)?;
    model.backward()?;
    model.zero_grad();
    Ok(report)
}
