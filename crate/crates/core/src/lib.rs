//! Inverted-framework multivariate forecasting with on-the-fly token
//! augmentation.
//!
//! Each variate's lookback series becomes one token; augmentation strategies
//! append extra tokens (cross-variation patches, frequency-filtered series,
//! jittered or scaled copies) that the backbone mixes with the originals.
//! Only the original tokens are projected to forecasts.

pub mod augment;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use augment::{AugmentationConfig, AugmentedTokens, Strategy, TokenGroup};
pub use data::{MultivariateSeries, SplitSpec, Window};
pub use error::{Error, Result};
pub use model::{Backbone, InvertedModelParams, ModelConfig};
pub use spectral::Spectrum;
pub use tensor::{Gradients, Tape, Tensor, Var};
pub use train::{EvalReport, TrainConfig};
