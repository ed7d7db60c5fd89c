//! Naive loop kernels. These are the correctness oracle for every faster path
//! and the only kernels that count the multiply-accumulates they execute.

use std::cell::Cell;

use super::geometry::{ConvGeometry, PaddingMode};
use super::{Matrix, Tensor4};
use crate::error::{Error, Result};

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates executed by reference kernels on this thread since the
/// last [`reset_mac_count`].
pub fn mac_count() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_count() {
    MACS.with(|c| c.set(0));
}

fn record(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

/// `C = A B` by the textbook triple loop.
pub fn matmul_exact(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n, p) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, p);
    let mut macs = 0u64;
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..n {
                acc += a.get(i, t) * b.get(t, j);
                macs += 1;
            }
            out.set(i, j, acc);
        }
    }
    record(macs);
    Ok(out)
}

/// `C = Aᵀ B`.
pub fn matmul_tn_exact(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(format!(
            "matmul_tn {}x{} (transposed) by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n, p) = (a.cols(), a.rows(), b.cols());
    let mut out = Matrix::zeros(m, p);
    let mut macs = 0u64;
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..n {
                acc += a.get(t, i) * b.get(t, j);
                macs += 1;
            }
            out.set(i, j, acc);
        }
    }
    record(macs);
    Ok(out)
}

/// `C = A Bᵀ`.
pub fn matmul_nt_exact(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "matmul_nt {}x{} by {}x{} (transposed)",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n, p) = (a.rows(), a.cols(), b.rows());
    let mut out = Matrix::zeros(m, p);
    let mut macs = 0u64;
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..n {
                acc += a.get(i, t) * b.get(j, t);
                macs += 1;
            }
            out.set(i, j, acc);
        }
    }
    record(macs);
    Ok(out)
}

/// Multi-channel stride-1 convolution (cross-correlation, as in every deep
/// learning framework) with zero padding outside the image.
pub fn conv2d_exact(input: &Tensor4, kernel: &Tensor4, pad: PaddingMode) -> Result<Tensor4> {
    let g = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    let mut out = Tensor4::zeros(g.output_dims());
    let mut macs = 0u64;
    for b in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                for oc in 0..g.oc {
                    let mut acc = 0.0;
                    for kh in 0..g.kh {
                        let r = g.in_row(oh, kh);
                        for kw in 0..g.kw {
                            let c = g.in_col(ow, kw);
                            for ic in 0..g.ic {
                                let x = match (r, c) {
                                    (Some(r), Some(c)) => input.get([b, r, c, ic]),
                                    _ => 0.0,
                                };
                                acc += x * kernel.get([kh, kw, ic, oc]);
                                macs += 1;
                            }
                        }
                    }
                    out.set([b, oh, ow, oc], acc);
                }
            }
        }
    }
    record(macs);
    Ok(out)
}

/// Gradient of the convolution with respect to its input.
pub fn conv2d_backward_data_exact(
    grad_out: &Tensor4,
    kernel: &Tensor4,
    input_dims: [usize; 4],
    pad: PaddingMode,
) -> Result<Tensor4> {
    let g = ConvGeometry::new(input_dims, kernel.dims(), pad)?;
    check_grad_dims(&g, grad_out)?;
    let mut grad_in = Tensor4::zeros(input_dims);
    let mut macs = 0u64;
    for b in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                for oc in 0..g.oc {
                    let d = grad_out.get([b, oh, ow, oc]);
                    for kh in 0..g.kh {
                        let r = g.in_row(oh, kh);
                        for kw in 0..g.kw {
                            let c = g.in_col(ow, kw);
                            for ic in 0..g.ic {
                                let prod = d * kernel.get([kh, kw, ic, oc]);
                                macs += 1;
                                if let (Some(r), Some(c)) = (r, c) {
                                    let o = grad_in.offset([b, r, c, ic]);
                                    grad_in.data_mut()[o] += prod;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    record(macs);
    Ok(grad_in)
}

/// Gradient of the convolution with respect to its kernel.
pub fn conv2d_backward_weight_exact(
    input: &Tensor4,
    grad_out: &Tensor4,
    kernel_dims: [usize; 4],
    pad: PaddingMode,
) -> Result<Tensor4> {
    let g = ConvGeometry::new(input.dims(), kernel_dims, pad)?;
    check_grad_dims(&g, grad_out)?;
    let mut grad_k = Tensor4::zeros(kernel_dims);
    let mut macs = 0u64;
    for b in 0..g.batch {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                for oc in 0..g.oc {
                    let d = grad_out.get([b, oh, ow, oc]);
                    for kh in 0..g.kh {
                        let r = g.in_row(oh, kh);
                        for kw in 0..g.kw {
                            let c = g.in_col(ow, kw);
                            for ic in 0..g.ic {
                                let x = match (r, c) {
                                    (Some(r), Some(c)) => input.get([b, r, c, ic]),
                                    _ => 0.0,
                                };
                                let o = grad_k.offset([kh, kw, ic, oc]);
                                grad_k.data_mut()[o] += x * d;
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    record(macs);
    Ok(grad_k)
}

pub(crate) fn check_grad_dims(g: &ConvGeometry, grad_out: &Tensor4) -> Result<()> {
    if grad_out.dims() != g.output_dims() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match convolution output {:?}",
            grad_out.dims(),
            g.output_dims()
        )));
    }
    Ok(())
}
