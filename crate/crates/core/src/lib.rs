//! Per-example gradients for convolutional networks.
//!
//! The crate provides a small `f64` tensor type with one general grouped
//! convolution ([`tensor::conv_nd`]), layers with cached forward and reverse
//! passes ([`layers`]), three interchangeable per-example gradient strategies
//! ([`strategies`]), DP-SGD style clipping and noisy aggregation ([`dp`]),
//! finite-difference checks ([`gradcheck`]) and a benchmark harness
//! ([`bench`]) driven by the `pergrad` binary.

pub mod bench;
pub mod dp;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod strategies;
pub mod tensor;

pub use error::{Error, Result};
pub use layers::{Grads, Network, PerExampleGrads};
pub use strategies::{per_example_grads, GradientRequest, StrategyKind};
pub use tensor::{conv_nd, ConvGeometry, Tensor};
