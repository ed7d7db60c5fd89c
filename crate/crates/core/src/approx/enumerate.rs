//! Exact moments of the scaled with-replacement estimators by enumerating
//! every index tuple `(i_1, …, i_k)` with weight `Π p_{i_t}`.

use crate::error::{Error, Result};
use crate::sampling::{Distribution, SamplingPlan, Selection};
use crate::tensor::{conv2d_exact, matmul_exact, Backend, Matrix, PaddingMode, Tensor4};

use super::ops::{apply_conv_plan, apply_matmul_plan};

/// Upper limit on `n^k` accepted by the enumerators.
pub const MAX_OUTCOMES: usize = 1 << 20;

/// Probability-weighted moments over all outcomes, element-wise in the
/// output's row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `Σ_outcomes P(outcome) ‖outcome − exact‖_F²`.
    pub expected_sq_error: f64,
    /// Number of index tuples with nonzero probability.
    pub outcomes: usize,
}

fn tuples(n: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    n.checked_pow(k as u32)
        .filter(|&c| c <= MAX_OUTCOMES)
        .ok_or_else(|| Error::domain(format!("{n}^{k} outcomes exceed the enumeration limit")))
}

/// Calls `f(plan, weight)` for every tuple with nonzero probability.
fn for_each_tuple(dist: &Distribution, k: usize, mut f: impl FnMut(&SamplingPlan, f64) -> Result<()>) -> Result<usize> {
    let n = dist.len();
    let count = tuples(n, k)?;
    let p = dist.probs();
    let mut seen = 0;
    for code in 0..count {
        let mut rest = code;
        let mut indices = Vec::with_capacity(k);
        for _ in 0..k {
            indices.push(rest % n);
            rest /= n;
        }
        let weight: f64 = indices.iter().map(|&i| p[i]).product();
        if weight == 0.0 {
            continue;
        }
        let plan = SamplingPlan {
            population: n,
            scales: indices.iter().map(|&i| 1.0 / (k as f64 * p[i])).collect(),
            indices,
            selection: Selection::Nps,
            replacement: true,
            scaled: true,
        };
        f(&plan, weight)?;
        seen += 1;
    }
    Ok(seen)
}

fn moments(exact: &[f64], outcomes: &[(Vec<f64>, f64)], count: usize) -> EnumeratedMoments {
    let len = exact.len();
    let mut mean = vec![0.0; len];
    for (out, w) in outcomes {
        for (m, v) in mean.iter_mut().zip(out) {
            *m += w * v;
        }
    }
    let mut variance = vec![0.0; len];
    let mut expected_sq_error = 0.0;
    for (out, w) in outcomes {
        for ((var, m), v) in variance.iter_mut().zip(&mean).zip(out) {
            *var += w * (v - m) * (v - m);
        }
        expected_sq_error += w * out.iter().zip(exact).map(|(v, e)| (v - e) * (v - e)).sum::<f64>();
    }
    EnumeratedMoments {
        mean,
        variance,
        expected_sq_error,
        outcomes: count,
    }
}

/// Enumerates the scaled with-replacement column-row estimator of `AB`.
pub fn enumerate_matmul(a: &Matrix, b: &Matrix, dist: &Distribution, k: usize) -> Result<EnumeratedMoments> {
    if dist.len() != a.cols() {
        return Err(Error::shape(format!(
            "distribution over {} pairs for a product with {} pairs",
            dist.len(),
            a.cols()
        )));
    }
    let exact = matmul_exact(a, b)?;
    let mut outcomes = Vec::new();
    let count = for_each_tuple(dist, k, |plan, w| {
        outcomes.push((apply_matmul_plan(Backend::Reference, a, b, plan)?.into_data(), w));
        Ok(())
    })?;
    Ok(moments(exact.data(), &outcomes, count))
}

/// Enumerates the scaled with-replacement channel-sampled convolution.
pub fn enumerate_conv(
    input: &Tensor4,
    kernel: &Tensor4,
    dist: &Distribution,
    k: usize,
    pad: PaddingMode,
) -> Result<EnumeratedMoments> {
    if dist.len() != input.dims()[3] {
        return Err(Error::shape(format!(
            "distribution over {} items for {} channels",
            dist.len(),
            input.dims()[3]
        )));
    }
    let exact = conv2d_exact(input, kernel, pad)?;
    let mut outcomes = Vec::new();
    let count = for_each_tuple(dist, k, |plan, w| {
        outcomes.push((
            apply_conv_plan(Backend::Reference, input, kernel, plan, pad)?.into_data(),
            w,
        ));
        Ok(())
    })?;
    Ok(moments(exact.data(), &outcomes, count))
}
