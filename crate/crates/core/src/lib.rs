//! SECNN: a sentence classifier that stacks the feature maps of parallel
//! convolution branches as channels and re-weights them with a
//! squeeze-and-excitation block.
//!
//! The numeric core is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the element type for the common cases. Training and gradient
//! checks run in `f64`.

pub mod embeddings;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape = tensor::Tape<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type EmbeddingMatrix = embeddings::EmbeddingMatrix<f64>;
pub type TrainOutcome = training::TrainOutcome<f64>;
