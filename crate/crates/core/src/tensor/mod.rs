//! Dense containers, exact reference kernels, fast kernels and norms.

mod fast;
mod geometry;
mod matrix;
mod norms;
pub mod reference;
mod tensor4;

pub use geometry::{ConvGeometry, PaddingMode};
pub use matrix::Matrix;
pub use norms::{axis_sum_squares, channel_norms, column_row_norms, frobenius_norm, sum_squares, Dense};
pub use reference::{
    conv2d_backward_data_exact, conv2d_backward_weight_exact, conv2d_exact, mac_count, matmul_exact, matmul_nt_exact,
    matmul_tn_exact, reset_mac_count,
};
pub use tensor4::{ChannelRole, Tensor4};

#[cfg(test)]
pub(crate) use matrix::max_abs_diff;

use crate::error::Result;

/// Kernel implementation used for products and convolutions.
///
/// `Reference` runs the naive loops and feeds the thread-local MAC counter;
/// `Fast` runs blocked GEMM and im2col. Both are deterministic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Backend {
    Reference,
    #[default]
    Fast,
}

impl Backend {
    pub fn matmul(self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        match self {
            Backend::Reference => matmul_exact(a, b),
            Backend::Fast => fast::matmul(a, b),
        }
    }

    /// `Aᵀ B`.
    pub fn matmul_tn(self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        match self {
            Backend::Reference => matmul_tn_exact(a, b),
            Backend::Fast => fast::matmul_tn(a, b),
        }
    }

    /// `A Bᵀ`.
    pub fn matmul_nt(self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        match self {
            Backend::Reference => matmul_nt_exact(a, b),
            Backend::Fast => fast::matmul_nt(a, b),
        }
    }

    pub fn conv2d(self, input: &Tensor4, kernel: &Tensor4, pad: PaddingMode) -> Result<Tensor4> {
        match self {
            Backend::Reference => conv2d_exact(input, kernel, pad),
            Backend::Fast => fast::conv2d(input, kernel, pad),
        }
    }

    pub fn conv2d_backward_data(
        self,
        grad_out: &Tensor4,
        kernel: &Tensor4,
        input_dims: [usize; 4],
        pad: PaddingMode,
    ) -> Result<Tensor4> {
        match self {
            Backend::Reference => conv2d_backward_data_exact(grad_out, kernel, input_dims, pad),
            Backend::Fast => fast::conv2d_backward_data(grad_out, kernel, input_dims, pad),
        }
    }

    pub fn conv2d_backward_weight(
        self,
        input: &Tensor4,
        grad_out: &Tensor4,
        kernel_dims: [usize; 4],
        pad: PaddingMode,
    ) -> Result<Tensor4> {
        match self {
            Backend::Reference => conv2d_backward_weight_exact(input, grad_out, kernel_dims, pad),
            Backend::Fast => fast::conv2d_backward_weight(input, grad_out, kernel_dims, pad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal(0.0, 1.0))
    }

    fn random_tensor(dims: [usize; 4], rng: &mut Rng) -> Tensor4 {
        Tensor4::from_fn(dims, |_| rng.normal(0.0, 1.0))
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        max_abs_diff(a, b) / scale
    }

    #[test]
    fn fast_matmuls_match_reference() {
        let mut rng = Rng::new(3);
        for &(m, k, n) in &[(1, 1, 1), (7, 13, 5), (33, 64, 17), (50, 100, 10)] {
            let a = random_matrix(m, k, &mut rng);
            let b = random_matrix(k, n, &mut rng);
            let exact = matmul_exact(&a, &b).unwrap();
            assert!(rel(Backend::Fast.matmul(&a, &b).unwrap().data(), exact.data()) < 1e-12);
            let at = a.transpose();
            assert!(rel(Backend::Fast.matmul_tn(&at, &b).unwrap().data(), exact.data()) < 1e-12);
            let bt = b.transpose();
            assert!(rel(Backend::Fast.matmul_nt(&a, &bt).unwrap().data(), exact.data()) < 1e-12);
        }
    }

    #[test]
    fn fast_convolutions_match_reference() {
        let mut rng = Rng::new(4);
        for pad in [PaddingMode::Valid, PaddingMode::Same] {
            for &(input, kernel) in &[
                ([2, 6, 5, 3], [3, 3, 3, 4]),
                ([1, 4, 4, 2], [2, 2, 2, 3]),
                ([3, 7, 7, 1], [5, 5, 1, 2]),
                ([2, 3, 3, 4], [1, 1, 4, 2]),
                // Larger than one patch chunk per example.
                ([3, 28, 28, 16], [5, 5, 16, 2]),
            ] {
                let i = random_tensor(input, &mut rng);
                let k = random_tensor(kernel, &mut rng);
                let exact = conv2d_exact(&i, &k, pad).unwrap();
                let fast = Backend::Fast.conv2d(&i, &k, pad).unwrap();
                assert_eq!(fast.dims(), exact.dims());
                assert!(rel(fast.data(), exact.data()) < 1e-12);

                let d_out = random_tensor(exact.dims(), &mut rng);
                let di = conv2d_backward_data_exact(&d_out, &k, input, pad).unwrap();
                let di_fast = Backend::Fast.conv2d_backward_data(&d_out, &k, input, pad).unwrap();
                assert!(rel(di_fast.data(), di.data()) < 1e-12);

                let dk = conv2d_backward_weight_exact(&i, &d_out, kernel, pad).unwrap();
                let dk_fast = Backend::Fast.conv2d_backward_weight(&i, &d_out, kernel, pad).unwrap();
                assert!(rel(dk_fast.data(), dk.data()) < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(I, K), G> = <I, dI(G, K)> = <K, dK(I, G)>
        let mut rng = Rng::new(9);
        let pad = PaddingMode::Same;
        let i = random_tensor([2, 5, 4, 3], &mut rng);
        let k = random_tensor([3, 2, 3, 2], &mut rng);
        let o = conv2d_exact(&i, &k, pad).unwrap();
        let g = random_tensor(o.dims(), &mut rng);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(o.data(), g.data());
        let di = conv2d_backward_data_exact(&g, &k, i.dims(), pad).unwrap();
        let dk = conv2d_backward_weight_exact(&i, &g, k.dims(), pad).unwrap();
        assert!((lhs - dot(i.data(), di.data())).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - dot(k.data(), dk.data())).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn pointwise_conv_is_reshaped_matmul() {
        let mut rng = Rng::new(5);
        let i = random_tensor([2, 3, 4, 5], &mut rng);
        let k = random_tensor([1, 1, 5, 3], &mut rng);
        let conv = conv2d_exact(&i, &k, PaddingMode::Valid).unwrap();
        let a = Matrix::new(2 * 3 * 4, 5, i.data().to_vec()).unwrap();
        let b = Matrix::new(5, 3, k.data().to_vec()).unwrap();
        let mm = matmul_exact(&a, &b).unwrap();
        assert!(rel(conv.data(), mm.data()) < 1e-12);
    }
}
