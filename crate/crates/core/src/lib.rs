//! Multi-stream convolutional fusion networks for video-based person
//! re-identification, on a small define-by-run autodiff engine.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
pub use tensor::Tensor;
