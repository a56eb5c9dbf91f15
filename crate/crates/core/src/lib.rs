//! Extreme low-resolution (16x12) video activity recognition.
//!
//! The crate covers the full pipeline: generating low-resolution videos from
//! high-resolution sources under sub-pixel camera transforms, optical-flow
//! stacks for the temporal stream, a two-stream per-frame network with
//! temporal-pyramid pooling, multi-Siamese embedding learning, and the
//! experiment harness comparing baseline, augmentation and multi-Siamese
//! training.

pub mod autodiff;
pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod loss;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod transform;

pub use error::{Error, FormatError, Result};
pub use tensor::Tensor;

/// Low-resolution frame height in pixels.
pub const LR_HEIGHT: usize = 12;
/// Low-resolution frame width in pixels.
pub const LR_WIDTH: usize = 16;
