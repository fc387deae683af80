//! Cross-patch style swap augmentation and source-free self-training for
//! semantic segmentation, at desk scale.
//!
//! Stage I trains [`model::SegNet`] on a labeled source domain with
//! photometric and style-swap augmentation ([`pipeline::train_source`]).
//! Stage II clones that model and self-trains it on unlabeled compound target
//! data with per-class confidence thresholds ([`pipeline::adapt_target`]),
//! without ever opening a source file.

pub mod autograd;
pub mod data;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod model;
pub mod photometric;
pub mod pipeline;
pub mod pseudo;
pub mod rng;
pub mod scalar;
pub mod style;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{LabelMap, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = autograd::Graph<f32>;
pub type Graph64 = autograd::Graph<f64>;
pub type SegNet32 = model::SegNet<f32>;
pub type SegNet64 = model::SegNet<f64>;
