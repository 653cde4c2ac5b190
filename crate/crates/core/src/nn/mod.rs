//! Shared neural-network plumbing on top of candle.

pub mod checkpoint;
pub mod extractor;
pub mod gradcheck;
pub mod layers;
pub mod store;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use extractor::{ConvStackExtractor, FeatureExtractor, IdentityExtractor};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{adain, Conv2d, ConvTranspose1d, GatedConv2d, Linear};
pub use store::{Init, ParamStore};

use candle_core::Tensor;

/// Reads a scalar tensor of any float dtype as `f64`.
pub fn scalar(t: &Tensor) -> crate::Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
