use crate::error::Result;
use crate::optim::{Optimizer, StepStats};
use crate::param::Parameters;

/// A model with a scalar loss over some sample type. `forward` records
/// whatever `backward` needs; `backward` consumes that record and
/// accumulates gradients into the parameters.
pub trait Objective: Parameters {
    type Sample: ?Sized;

    fn forward(&mut self, sample: &Self::Sample) -> Result<f64>;

    /// Errors with [`crate::NnError::NoForward`] if no forward is pending.
    fn backward(&mut self) -> Result<()>;
}

/// Backward pass of the pending forward followed by one optimizer step.
pub fn backward_and_step<M: Objective + ?Sized>(model: &mut M, optimizer: &mut Optimizer) -> Result<StepStats> {
    model.backward()?;
    optimizer.step(model)
}
