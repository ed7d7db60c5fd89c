//! Parameter-free layers and the softmax cross-entropy head.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Matrix, Tensor4};

pub fn relu(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(output: &[f64], grad: &[f64]) -> Vec<f64> {
    output
        .iter()
        .zip(grad)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect()
}

/// 2×2 stride-2 max pooling over NHWC. Trailing odd rows or columns are
/// dropped. Returns the pooled tensor and, per output element, the flat
/// input offset of its maximum (first in row-major order on ties).
pub fn maxpool2(input: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [b, h, w, c] = input.dims();
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(Error::shape(format!("cannot 2x2-pool a {h}x{w} map")));
    }
    let mut out = Tensor4::zeros([b, oh, ow, c]);
    let mut argmax = vec![0; out.len()];
    let mut o = 0;
    for n in 0..b {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = input.offset([n, 2 * y, 2 * x, ch]);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = input.offset([n, 2 * y + dy, 2 * x + dx, ch]);
                        if input.data()[cand] > input.data()[best] {
                            best = cand;
                        }
                    }
                    out.data_mut()[o] = input.data()[best];
                    argmax[o] = best;
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient to the input position that won the max.
pub fn maxpool2_backward(input_dims: [usize; 4], argmax: &[usize], grad: &Tensor4) -> Tensor4 {
    let mut out = Tensor4::zeros(input_dims);
    for (&i, g) in argmax.iter().zip(grad.data()) {
        out.data_mut()[i] += g;
    }
    out
}

/// Inverted dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

/// Mean softmax cross-entropy of `logits` (batch × classes) against integer
/// labels, with its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::shape(format!("{batch} logits rows but {} labels", labels.len())));
    }
    let mut grad = Matrix::zeros(batch, classes);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::domain(format!("label {label} with {classes} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        for (c, v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad.set(r, c, (p - target) / batch as f64);
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Index of the largest logit in every row (first on ties).
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
