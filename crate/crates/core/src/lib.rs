//! Translation-invariance auditing for convolutional networks.
//!
//! Exact global-pooling invariance holds for convolutional (stride-1)
//! responses and, approximately, for subsampled responses that are
//! shiftable. This crate provides the sampling-theory checks, a small
//! trainable CNN engine, image-plane protocols (embedding, 1-pixel shifts
//! and rescalings, noisy crops) and the audits that measure how often a
//! network's top-1 prediction flips under them, plus a chi-squared test for
//! positional bias in object annotations.

pub mod audit;
pub mod biasstat;
pub mod data;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod tensor;
pub mod transforms;

pub use tensor::{PadMode, Tensor};
