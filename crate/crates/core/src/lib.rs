//! Multi-tiered out-of-distribution watchdog for image classifiers.
//!
//! Inputs pass an autoencoder reconstruction-SSIM gate (tier 1), then a binary
//! in/out-of-distribution classifier trained on generated near-threshold
//! samples (tier 2), before reaching the core multi-class classifier.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoencoder;
pub mod boundary;
pub mod classifier;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
