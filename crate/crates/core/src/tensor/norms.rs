use super::{ChannelRole, Matrix, Tensor4};
use crate::error::{Error, Result};

/// Anything stored as a flat array of `f64`.
pub trait Dense {
    fn values(&self) -> &[f64];
    fn shape_vec(&self) -> Vec<usize>;
}

impl Dense for Matrix {
    fn values(&self) -> &[f64] {
        self.data()
    }

    fn shape_vec(&self) -> Vec<usize> {
        vec![self.rows(), self.cols()]
    }
}

impl Dense for Tensor4 {
    fn values(&self) -> &[f64] {
        self.data()
    }

    fn shape_vec(&self) -> Vec<usize> {
        self.dims().to_vec()
    }
}

pub fn sum_squares(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

pub fn frobenius_norm<T: Dense + ?Sized>(t: &T) -> f64 {
    sum_squares(t.values()).sqrt()
}

/// Euclidean norms of the columns of `a` and of the rows of `b`.
pub fn column_row_norms(a: &Matrix, b: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.cols() != b.rows() {
        return Err(Error::shape(format!(
            "column-row norms need A.cols == B.rows, got {} and {}",
            a.cols(),
            b.rows()
        )));
    }
    let mut col_sq = vec![0.0; a.cols()];
    for r in 0..a.rows() {
        for (acc, v) in col_sq.iter_mut().zip(a.row(r)) {
            *acc += v * v;
        }
    }
    let cols = col_sq.into_iter().map(f64::sqrt).collect();
    let rows = (0..b.rows()).map(|r| sum_squares(b.row(r)).sqrt()).collect();
    Ok((cols, rows))
}

/// Frobenius norm of every input-channel slice.
pub fn channel_norms(t: &Tensor4, role: ChannelRole) -> Vec<f64> {
    axis_sum_squares(t, Tensor4::channel_axis(role))
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Sum of squares of every slice along `axis`.
pub fn axis_sum_squares(t: &Tensor4, axis: usize) -> Vec<f64> {
    let dims = t.dims();
    let inner: usize = dims[axis + 1..].iter().product();
    let n = dims[axis];
    let mut acc = vec![0.0; n];
    for (i, v) in t.data().iter().enumerate() {
        acc[(i / inner) % n] += v * v;
    }
    acc
}
