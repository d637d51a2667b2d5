//! Adaptive masked-patch pretraining for lesion segmentation at desk scale.
//!
//! Numeric code is generic over [`numerics::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod clustering;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod patches;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Image64 = patches::Image<f64>;
pub type Autoencoder64 = model::MlpAutoencoder<f64>;
pub type Autoencoder32 = model::MlpAutoencoder<f32>;
pub type SegHead64 = model::SegHead<f64>;
pub type SegHead32 = model::SegHead<f32>;
pub type Pretrainer64 = trainer::Pretrainer<f64>;
pub type Pretrainer32 = trainer::Pretrainer<f32>;
pub type FinetunedModel64 = trainer::FinetunedModel<f64>;
pub type FinetunedModel32 = trainer::FinetunedModel<f32>;
