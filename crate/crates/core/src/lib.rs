//! Desk-scale lab for unsupervised inconsistency-aware forgery detection.
//!
//! A mini vision transformer is trained on a procedurally generated corpus of
//! real and locally-composited fake images. Patch features from a middle
//! encoder layer feed a pair of streaming multivariate Gaussians (one for
//! real patches, one for fake patches inside a fixed center prior), whose
//! Mahalanobis distances yield pseudo forgery-location maps. Those maps
//! supervise the encoder's own attention logits through a patch-consistency
//! loss with learnable targets, and a progressively blended attention row
//! weights the final patch pooling for classification.
//!
//! Core numerics are generic over the scalar type (`f32` or `f64`, see
//! [`scalar::Scalar`]); the training pipeline instantiates everything at
//! `f64`, for which aliases are exported at the crate root.

pub mod audit;
pub mod autodiff;
pub mod checkpoint;
pub mod consistency;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod metrics;
pub mod mvg;
pub mod optim;
pub mod pcwa;
pub mod pnm;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod vit;

pub use error::Error;
pub use scalar::Scalar;

/// Double-precision graph used by the training pipeline.
pub type GraphF64 = autodiff::Graph<f64>;
/// Single-precision graph; the math is identical, tolerances are not.
pub type GraphF32 = autodiff::Graph<f32>;
/// Double-precision parameter store.
pub type ParamStoreF64 = optim::ParamStore<f64>;
/// Double-precision adaptive-moment optimizer.
pub type AdamF64 = optim::Adam<f64>;
/// Double-precision per-class Gaussian statistics.
pub type GaussianStatsF64 = mvg::GaussianStats<f64>;
