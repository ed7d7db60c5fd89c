use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sampling::{channel_scores, plan_from_scores, Policy, SamplingPlan};
use crate::tensor::{column_row_norms, frobenius_norm, Backend, Dense, Matrix, PaddingMode, Tensor4};

/// Plan over the `n` column-row pairs of `A (m×n)` and `B (n×p)`.
pub fn matmul_plan(a: &Matrix, b: &Matrix, policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    let (cols, rows) = column_row_norms(a, b)?;
    let scores: Vec<f64> = cols.iter().zip(&rows).map(|(c, r)| c * r).collect();
    plan_from_scores(&scores, policy, rng)
}

/// `Ã D B̃`: sampled columns of `A` times the matching rows of `B`, each term
/// weighted by its plan scale.
pub fn apply_matmul_plan(backend: Backend, a: &Matrix, b: &Matrix, plan: &SamplingPlan) -> Result<Matrix> {
    if a.cols() != b.rows() || plan.population != a.cols() {
        return Err(Error::shape(format!(
            "plan over {} pairs applied to {}x{} by {}x{}",
            plan.population,
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut a_s = a.select_cols(&plan.indices);
    for r in 0..a_s.rows() {
        for (t, s) in plan.scales.iter().enumerate() {
            let v = a_s.get(r, t) * s;
            a_s.set(r, t, v);
        }
    }
    let b_s = b.select_rows(&plan.indices);
    backend.matmul(&a_s, &b_s)
}

pub fn approx_matmul(a: &Matrix, b: &Matrix, policy: &Policy, rng: &mut Rng) -> Result<(Matrix, SamplingPlan)> {
    approx_matmul_with(Backend::Fast, a, b, policy, rng)
}

pub fn approx_matmul_with(
    backend: Backend,
    a: &Matrix,
    b: &Matrix,
    policy: &Policy,
    rng: &mut Rng,
) -> Result<(Matrix, SamplingPlan)> {
    let plan = matmul_plan(a, b, policy, rng)?;
    let out = apply_matmul_plan(backend, a, b, &plan)?;
    Ok((out, plan))
}

/// Plan over the input channels shared by `input` (NHWC) and `kernel` (HWIO).
pub fn conv_plan(input: &Tensor4, kernel: &Tensor4, policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    plan_from_scores(&channel_scores(input, kernel)?, policy, rng)
}

/// Convolution of the sampled channels, each of `Ĩ` and `K̃` multiplied by
/// the square root of the plan scale so every term carries the full scale.
pub fn apply_conv_plan(
    backend: Backend,
    input: &Tensor4,
    kernel: &Tensor4,
    plan: &SamplingPlan,
    pad: PaddingMode,
) -> Result<Tensor4> {
    let ic = input.dims()[3];
    if kernel.dims()[2] != ic || plan.population != ic {
        return Err(Error::shape(format!(
            "plan over {} channels applied to input with {ic} and kernel with {} channels",
            plan.population,
            kernel.dims()[2]
        )));
    }
    let roots = plan.sqrt_scales();
    let i_s = input.gather_scaled(3, &plan.indices, &roots);
    let k_s = kernel.gather_scaled(2, &plan.indices, &roots);
    backend.conv2d(&i_s, &k_s, pad)
}

pub fn approx_conv2d(
    input: &Tensor4,
    kernel: &Tensor4,
    policy: &Policy,
    pad: PaddingMode,
    rng: &mut Rng,
) -> Result<(Tensor4, SamplingPlan)> {
    approx_conv2d_with(Backend::Fast, input, kernel, policy, pad, rng)
}

pub fn approx_conv2d_with(
    backend: Backend,
    input: &Tensor4,
    kernel: &Tensor4,
    policy: &Policy,
    pad: PaddingMode,
    rng: &mut Rng,
) -> Result<(Tensor4, SamplingPlan)> {
    let plan = conv_plan(input, kernel, policy, rng)?;
    let out = apply_conv_plan(backend, input, kernel, &plan, pad)?;
    Ok((out, plan))
}

/// Error of an approximate product relative to `‖lhs‖_F ‖rhs‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖exact − approx‖_F / (‖lhs‖_F ‖rhs‖_F)`.
    pub normalized_frobenius: f64,
    /// Largest absolute entry of `exact − approx`.
    pub per_element_max: f64,
    /// `‖exact − approx‖_2 / (‖lhs‖_F ‖rhs‖_F)`; matrices only.
    pub spectral: Option<f64>,
    /// Reference bound the caller compares against, if any.
    pub bound: Option<f64>,
}

impl ErrorReport {
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }
}

pub fn normalized_error<T: Dense, L: Dense, R: Dense>(exact: &T, approx: &T, lhs: &L, rhs: &R) -> Result<ErrorReport> {
    if exact.shape_vec() != approx.shape_vec() {
        return Err(Error::shape(format!(
            "exact {:?} and approximate {:?} differ in shape",
            exact.shape_vec(),
            approx.shape_vec()
        )));
    }
    let denom = frobenius_norm(lhs) * frobenius_norm(rhs);
    let diff: Vec<f64> = exact.values().iter().zip(approx.values()).map(|(e, a)| e - a).collect();
    let err = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::domain("normalization by a zero operand norm"));
    }
    Ok(ErrorReport {
        normalized_frobenius: err / denom,
        per_element_max: diff.iter().fold(0.0, |m, d| m.max(d.abs())),
        spectral: None,
        bound: None,
    })
}

/// [`normalized_error`] plus the normalized spectral norm of the error matrix.
pub fn normalized_matmul_error(exact: &Matrix, approx: &Matrix, a: &Matrix, b: &Matrix) -> Result<ErrorReport> {
    let mut report = normalized_error(exact, approx, a, b)?;
    let diff = Matrix::from_parts(
        exact.rows(),
        exact.cols(),
        exact.data().iter().zip(approx.data()).map(|(e, x)| e - x).collect(),
    );
    report.spectral = Some(spectral_norm(&diff) / (frobenius_norm(a) * frobenius_norm(b)));
    Ok(report)
}

/// Largest singular value by power iteration on `MᵀM`, stopping at relative
/// change 1e-6 or 1000 iterations.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let n = m.cols();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut sigma = 0.0;
    for _ in 0..1000 {
        let mv: Vec<f64> = (0..m.rows())
            .map(|r| m.row(r).iter().zip(&v).map(|(x, y)| x * y).sum())
            .collect();
        let mut w = vec![0.0; n];
        for (r, s) in mv.iter().enumerate() {
            for (wc, x) in w.iter_mut().zip(m.row(r)) {
                *wc += x * s;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        let done = (next - sigma).abs() <= 1e-6 * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

/// `1/√k`: bound on the expected normalized Frobenius error of scaled
/// with-replacement sampling under norm-proportional probabilities.
pub fn matmul_error_bound(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("error bound needs k >= 1"));
    }
    Ok(1.0 / (k as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{SampleSize, Selection};
    use crate::tensor::{conv2d_exact, matmul_exact};

    fn gaussian(rows: usize, cols: usize, mean: f64, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal(mean, 1.0))
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        crate::tensor::max_abs_diff(a, b) / scale
    }

    #[test]
    fn full_sampling_is_exact() {
        let mut rng = Rng::new(1);
        let a = gaussian(6, 9, 0.5, &mut rng);
        let b = gaussian(9, 4, -0.2, &mut rng);
        let exact = matmul_exact(&a, &b).unwrap();
        for sel in [Selection::Uniform, Selection::Nps, Selection::TopK] {
            let policy = Policy::new(sel, false, false, SampleSize::Ratio(1.0)).unwrap();
            let (approx, plan) = approx_matmul(&a, &b, &policy, &mut rng).unwrap();
            assert_eq!(plan.k(), 9);
            assert!(rel(approx.data(), exact.data()) < 1e-12);
        }
        let uniform_scaled = Policy::new(Selection::Uniform, false, true, SampleSize::Ratio(1.0)).unwrap();
        let (approx, _) = approx_matmul(&a, &b, &uniform_scaled, &mut rng).unwrap();
        assert!(rel(approx.data(), exact.data()) < 1e-12);
    }

    #[test]
    fn single_nonzero_column_topk_is_exact() {
        let a = Matrix::from_fn(4, 5, |r, c| if c == 3 { r as f64 + 1.0 } else { 0.0 });
        let b = Matrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 - 4.0);
        let mut rng = Rng::new(0);
        let policy = Policy::new(Selection::TopK, false, false, SampleSize::Count(1)).unwrap();
        let (approx, plan) = approx_matmul(&a, &b, &policy, &mut rng).unwrap();
        assert_eq!(plan.indices, vec![3]);
        assert_eq!(approx, matmul_exact(&a, &b).unwrap());
    }

    #[test]
    fn pointwise_conv_matches_matmul_under_same_plan() {
        let mut rng = Rng::new(8);
        let input = Tensor4::from_fn([2, 3, 3, 6], |_| rng.normal(0.0, 1.0));
        let kernel = Tensor4::from_fn([1, 1, 6, 4], |_| rng.normal(0.0, 1.0));
        let a = Matrix::new(18, 6, input.data().to_vec()).unwrap();
        let b = Matrix::new(6, 4, kernel.data().to_vec()).unwrap();
        for policy in Policy::all_variants(SampleSize::Count(3)) {
            let mut r1 = Rng::new(42);
            let mut r2 = Rng::new(42);
            let (conv, conv_plan) = approx_conv2d(&input, &kernel, &policy, PaddingMode::Valid, &mut r1).unwrap();
            let (mm, mm_plan) = approx_matmul(&a, &b, &policy, &mut r2).unwrap();
            assert_eq!(conv_plan.indices, mm_plan.indices, "{}", policy.descriptor());
            assert!(rel(conv.data(), mm.data()) < 1e-12, "{}", policy.descriptor());
        }
    }

    #[test]
    fn full_channel_sampling_is_exact() {
        let mut rng = Rng::new(3);
        let input = Tensor4::from_fn([2, 5, 5, 4], |_| rng.normal(0.0, 1.0));
        let kernel = Tensor4::from_fn([3, 3, 4, 2], |_| rng.normal(0.0, 1.0));
        let exact = conv2d_exact(&input, &kernel, PaddingMode::Same).unwrap();
        for sel in [Selection::Uniform, Selection::Nps, Selection::TopK] {
            let policy = Policy::new(sel, false, false, SampleSize::Ratio(1.0)).unwrap();
            let (approx, _) = approx_conv2d(&input, &kernel, &policy, PaddingMode::Same, &mut rng).unwrap();
            assert!(rel(approx.data(), exact.data()) < 1e-12);
        }
    }

    #[test]
    fn error_examples() {
        let i2 = Matrix::identity(2);
        let zero = Matrix::zeros(2, 2);
        let r = normalized_error(&i2, &i2, &i2, &i2).unwrap();
        assert_eq!(r.normalized_frobenius, 0.0);
        let r = normalized_matmul_error(&i2, &zero, &i2, &i2).unwrap();
        assert!((r.normalized_frobenius - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(r.per_element_max, 1.0);
        assert!((r.spectral.unwrap() - 0.5).abs() < 1e-6);
        assert!(normalized_error(&i2, &Matrix::zeros(2, 3), &i2, &i2).is_err());
    }

    #[test]
    fn error_invariant_under_balanced_rescaling() {
        let mut rng = Rng::new(5);
        let a = gaussian(5, 7, 1.0, &mut rng);
        let b = gaussian(7, 3, 1.0, &mut rng);
        let exact = matmul_exact(&a, &b).unwrap();
        let policy = Policy::new(Selection::Nps, true, true, SampleSize::Count(3)).unwrap();
        let plan = matmul_plan(&a, &b, &policy, &mut rng).unwrap();
        let approx = apply_matmul_plan(Backend::Reference, &a, &b, &plan).unwrap();
        let e1 = normalized_error(&exact, &approx, &a, &b).unwrap().normalized_frobenius;
        let (a2, b2) = (a.scale(4.0), b.scale(0.25));
        let exact2 = matmul_exact(&a2, &b2).unwrap();
        let approx2 = apply_matmul_plan(Backend::Reference, &a2, &b2, &plan).unwrap();
        let e2 = normalized_error(&exact2, &approx2, &a2, &b2)
            .unwrap()
            .normalized_frobenius;
        assert!((e1 - e2).abs() < 1e-12 * e1);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, -5.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-5);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(matmul_error_bound(1).unwrap(), 1.0);
        assert!((matmul_error_bound(100).unwrap() - 0.1).abs() < 1e-15);
        assert!((matmul_error_bound(25).unwrap() - 0.2).abs() < 1e-15);
        assert!(matmul_error_bound(0).is_err());
    }
}
