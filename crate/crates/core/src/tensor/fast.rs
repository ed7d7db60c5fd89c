//! Blocked GEMM (via `matrixmultiply`) and im2col convolutions. Single
//! threaded and deterministic; checked against [`super::reference`].

use super::geometry::{ConvGeometry, PaddingMode};
use super::reference::check_grad_dims;
use super::{Matrix, Tensor4};
use crate::error::{Error, Result};

/// `C (m×n) = op(A) (m×k) · op(B) (k×n) + beta·C` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the assertions above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_into(m, k, n, a, rsa, csa, b, rsb, csb, 0.0, &mut c);
    c
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let c = gemm(m, k, n, a.data(), k, 1, b.data(), n, 1);
    Ok(Matrix::from_parts(m, n, c))
}

/// `Aᵀ B` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "matmul_tn {}x{} (transposed) by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k, n) = (a.cols(), a.rows(), b.cols());
    let c = gemm(m, k, n, a.data(), 1, m, b.data(), n, 1);
    Ok(Matrix::from_parts(m, n, c))
}

/// `A Bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "matmul_nt {}x{} by {}x{} (transposed)",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let c = gemm(m, k, n, a.data(), k, 1, b.data(), 1, k);
    Ok(Matrix::from_parts(m, n, c))
}

/// Upper bound on the patch buffer, in elements; convolutions run over
/// batch chunks that fit.
const PATCH_BUDGET: usize = 1 << 19;

fn chunk_len(g: &ConvGeometry) -> usize {
    let per_example = (g.oh * g.ow * g.kh * g.kw * g.ic).max(1);
    (PATCH_BUDGET / per_example).clamp(1, g.batch.max(1))
}

/// Patch rows for examples `b0..b1`: one row per output position
/// `(b, oh, ow)` and one column per kernel tap `(kh, kw, ic)`, matching the
/// HWIO kernel flattened to rows.
fn im2col_into(src: &[f64], g: &ConvGeometry, b0: usize, b1: usize, data: &mut Vec<f64>) {
    let cols = g.kh * g.kw * g.ic;
    data.clear();
    data.resize((b1 - b0) * g.oh * g.ow * cols, 0.0);
    let mut row = 0;
    for b in b0..b1 {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let base = row * cols;
                for kh in 0..g.kh {
                    let Some(r) = g.in_row(oh, kh) else { continue };
                    for kw in 0..g.kw {
                        let Some(c) = g.in_col(ow, kw) else { continue };
                        let from = ((b * g.ih + r) * g.iw + c) * g.ic;
                        let to = base + (kh * g.kw + kw) * g.ic;
                        data[to..to + g.ic].copy_from_slice(&src[from..from + g.ic]);
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adds patch-row gradients for examples `b0..` back onto the input layout.
fn col2im_add(src: &[f64], g: &ConvGeometry, b0: usize, dst: &mut [f64]) {
    let width = g.kh * g.kw * g.ic;
    let rows_per = g.oh * g.ow;
    for (local, chunk) in src.chunks_exact(rows_per * width).enumerate() {
        let b = b0 + local;
        let mut row = 0;
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let base = row * width;
                for kh in 0..g.kh {
                    let Some(r) = g.in_row(oh, kh) else { continue };
                    for kw in 0..g.kw {
                        let Some(c) = g.in_col(ow, kw) else { continue };
                        let to = ((b * g.ih + r) * g.iw + c) * g.ic;
                        let from = base + (kh * g.kw + kw) * g.ic;
                        for i in 0..g.ic {
                            dst[to + i] += chunk[from + i];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn batch_chunks(g: &ConvGeometry) -> impl Iterator<Item = (usize, usize)> {
    let step = chunk_len(g);
    let batch = g.batch;
    (0..batch).step_by(step).map(move |b0| (b0, (b0 + step).min(batch)))
}

pub fn conv2d(input: &Tensor4, kernel: &Tensor4, pad: PaddingMode) -> Result<Tensor4> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    let taps = g.kh * g.kw * g.ic;
    let rows_per = g.oh * g.ow;
    let mut out = Tensor4::zeros(g.output_dims());
    let mut patches = Vec::new();
    for (b0, b1) in batch_chunks(&g) {
        im2col_into(input.data(), &g, b0, b1, &mut patches);
        let m = (b1 - b0) * rows_per;
        let dst = &mut out.data_mut()[b0 * rows_per * g.oc..b1 * rows_per * g.oc];
        gemm_into(m, taps, g.oc, &patches, taps, 1, kernel.data(), g.oc, 1, 0.0, dst);
    }
    Ok(out)
}

pub fn conv2d_backward_data(
    grad_out: &Tensor4,
    kernel: &Tensor4,
    input_dims: [usize; 4],
    pad: PaddingMode,
) -> Result<Tensor4> {
    let g = ConvGeometry::new(input_dims, kernel.dims(), pad)?;
    check_grad_dims(&g, grad_out)?;
    let taps = g.kh * g.kw * g.ic;
    let rows_per = g.oh * g.ow;
    let mut out = Tensor4::zeros(input_dims);
    let mut dcols = Vec::new();
    for (b0, b1) in batch_chunks(&g) {
        let m = (b1 - b0) * rows_per;
        dcols.clear();
        dcols.resize(m * taps, 0.0);
        let dy = &grad_out.data()[b0 * rows_per * g.oc..b1 * rows_per * g.oc];
        gemm_into(m, g.oc, taps, dy, g.oc, 1, kernel.data(), 1, g.oc, 0.0, &mut dcols);
        col2im_add(&dcols, &g, b0, out.data_mut());
    }
    Ok(out)
}

pub fn conv2d_backward_weight(
    input: &Tensor4,
    grad_out: &Tensor4,
    kernel_dims: [usize; 4],
    pad: PaddingMode,
) -> Result<Tensor4> {
    let g = ConvGeometry::new(input.dims(), kernel_dims, pad)?;
    check_grad_dims(&g, grad_out)?;
    let taps = g.kh * g.kw * g.ic;
    let rows_per = g.oh * g.ow;
    let mut dk = Tensor4::zeros(kernel_dims);
    let mut patches = Vec::new();
    for (i, (b0, b1)) in batch_chunks(&g).enumerate() {
        im2col_into(input.data(), &g, b0, b1, &mut patches);
        let m = (b1 - b0) * rows_per;
        let dy = &grad_out.data()[b0 * rows_per * g.oc..b1 * rows_per * g.oc];
        let beta = if i == 0 { 0.0 } else { 1.0 };
        gemm_into(taps, m, g.oc, &patches, 1, taps, dy, g.oc, 1, beta, dk.data_mut());
    }
    Ok(dk)
}
