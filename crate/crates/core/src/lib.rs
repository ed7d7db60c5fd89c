//! Approximate tensor operations by column-row sampling.
//!
//! Matrix products `AB` are approximated by a scaled sum of `k` sampled
//! column-row outer products, and multi-channel convolutions by sampling
//! input channels shared between input and kernel. The crate also carries
//! the closed-form moment formulas and brute-force enumeration oracles for
//! those estimators, plus a small fully-connected/convolutional training
//! stack in which every heavy product may be sampled, with exact
//! multiply-accumulate accounting.

pub mod approx;
pub mod data;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use sampling::{Distribution, Policy, SampleSize, SamplingPlan, Selection};
pub use tensor::{Backend, ChannelRole, Matrix, PaddingMode, Tensor4};
