use obfusim_nn::Tensor;

use crate::error::Result;

/// Anything that maps a `w × d` page window to segment bits and bid classes:
/// the ground-truth oracles and the trained surrogates both implement it.
pub trait Tracker: Send + Sync {
    fn window(&self) -> usize;
    fn segment_count(&self) -> usize;
    fn bidder_count(&self) -> usize;
    fn segments(&self, window: &Tensor) -> Result<Vec<u8>>;
    fn bid_classes(&self, window: &Tensor) -> Result<Vec<u8>>;
    /// Raw bid values, when the tracker can report them.
    fn bid_values(&self, _window: &Tensor) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}
