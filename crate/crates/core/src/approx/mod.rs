//! Sampled products and convolutions, their error metrics, the closed-form
//! moments of the convolution estimator, and enumeration oracles.

mod enumerate;
mod moments;
mod ops;

pub use enumerate::{enumerate_conv, enumerate_matmul, EnumeratedMoments, MAX_OUTCOMES};
pub use moments::{conv_expected_error, conv_variance_element, correction_terms, CorrectionTerms};
pub use ops::{
    apply_conv_plan, apply_matmul_plan, approx_conv2d, approx_conv2d_with, approx_matmul, approx_matmul_with,
    conv_plan, matmul_error_bound, matmul_plan, normalized_error, normalized_matmul_error, spectral_norm, ErrorReport,
};
