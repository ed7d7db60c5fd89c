//! Fully-connected and convolutional layers whose products may be sampled.
//!
//! A forward plan restricts the shared dimension (input features or input
//! channels) and its scales are reused unchanged in the backward products,
//! so the backward pass is the exact gradient of the sampled forward
//! function. A backward policy additionally samples each backward product
//! over its own shared dimension.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::nn::ledger::MacPair;
use crate::rng::Rng;
use crate::sampling::{channel_scores, plan_from_scores, topk_plan, Policy, SampleSize, SamplingPlan, Selection};
use crate::tensor::{axis_sum_squares, Backend, ConvGeometry, Matrix, PaddingMode, Tensor4};

/// Gradients of one layer plus the MACs the two backward products cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    /// `None` when the input gradient was not requested.
    pub input: Option<T>,
    pub weight: T,
    pub data_macs: MacPair,
    pub weight_macs: MacPair,
}

/// Plan over a dimension with the given scores. Random norm-proportional
/// draws without replacement take at most as many items as have a nonzero
/// score.
pub fn layer_plan(scores: &[f64], policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    if policy.selection == Selection::Nps && !policy.replacement {
        let k = policy.sample_count(scores.len());
        let nonzero = scores.iter().filter(|&&s| s > 0.0).count();
        if nonzero > 0 && nonzero < k {
            let capped = Policy::new(policy.selection, false, policy.scaled, SampleSize::Count(nonzero))?;
            return plan_from_scores(scores, &capped, rng);
        }
    }
    plan_from_scores(scores, policy, rng)
}

fn check_plan(plan: &SamplingPlan, n: usize, what: &str) -> Result<()> {
    if plan.population != n || plan.indices.iter().any(|&i| i >= n) {
        return Err(Error::shape(format!(
            "plan over {} items used for {what} of size {n}",
            plan.population
        )));
    }
    Ok(())
}

fn scale_cols(m: &mut Matrix, factors: &[f64]) {
    let cols = m.cols();
    for row in m.data_mut().chunks_exact_mut(cols) {
        for (v, f) in row.iter_mut().zip(factors) {
            *v *= f;
        }
    }
}

fn scale_rows(m: &mut Matrix, factors: &[f64]) {
    let cols = m.cols();
    for (row, f) in m.data_mut().chunks_exact_mut(cols).zip(factors) {
        for v in row {
            *v *= f;
        }
    }
}

fn row_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn col_norms(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v * v;
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

fn products(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn fc_macs(batch: usize, shared: usize, out: usize) -> u64 {
    (batch * shared * out) as u64
}

/// `X W` with the shared (input-feature) dimension optionally sampled.
pub fn forward_fc(
    backend: Backend,
    x: &Matrix,
    w: &Matrix,
    policy: Option<&Policy>,
    rng: &mut Rng,
) -> Result<(Matrix, Option<SamplingPlan>)> {
    if x.cols() != w.rows() {
        return Err(Error::shape(format!(
            "fc input has {} features, weight has {} rows",
            x.cols(),
            w.rows()
        )));
    }
    match policy {
        None => Ok((backend.matmul(x, w)?, None)),
        Some(policy) => {
            let plan = fc_plan(x, w, policy, rng)?;
            let y = apply_fc_plan(backend, x, w, &plan)?;
            Ok((y, Some(plan)))
        }
    }
}

pub(crate) fn fc_plan(x: &Matrix, w: &Matrix, policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    layer_plan(&products(&col_norms(x), &row_norms(w)), policy, rng)
}

pub(crate) fn apply_fc_plan(backend: Backend, x: &Matrix, w: &Matrix, plan: &SamplingPlan) -> Result<Matrix> {
    check_plan(plan, x.cols(), "fc input features")?;
    let mut xs = x.select_cols(&plan.indices);
    scale_cols(&mut xs, &plan.scales);
    backend.matmul(&xs, &w.select_rows(&plan.indices))
}

pub fn fc_forward_macs(batch: usize, inputs: usize, outputs: usize, plan: Option<&SamplingPlan>) -> MacPair {
    MacPair {
        exact: fc_macs(batch, inputs, outputs),
        actual: fc_macs(batch, plan.map_or(inputs, |p| p.k()), outputs),
    }
}

/// Gradients of `X W` (sampled by `plan`) with respect to `X` and `W`.
pub fn backward_fc(
    backend: Backend,
    plan: Option<&SamplingPlan>,
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    backward_policy: Option<&Policy>,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix)> {
    let g = backward_fc_with(backend, plan, x, w, dy, backward_policy, rng, true)?;
    Ok((g.input.expect("input gradient requested"), g.weight))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_fc_with(
    backend: Backend,
    plan: Option<&SamplingPlan>,
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    backward_policy: Option<&Policy>,
    rng: &mut Rng,
    want_input: bool,
) -> Result<LayerGrads<Matrix>> {
    let (batch, inputs) = x.shape();
    let outputs = w.cols();
    if w.rows() != inputs || dy.shape() != (batch, outputs) {
        return Err(Error::shape(format!(
            "fc backward: X {batch}x{inputs}, W {}x{outputs}, dY {}x{}",
            w.rows(),
            dy.rows(),
            dy.cols()
        )));
    }
    if let Some(p) = plan {
        check_plan(p, inputs, "fc input features")?;
    }
    let (xs, ws): (Cow<Matrix>, Cow<Matrix>) = match plan {
        None => (Cow::Borrowed(x), Cow::Borrowed(w)),
        Some(p) => {
            let mut xs = x.select_cols(&p.indices);
            scale_cols(&mut xs, &p.scales);
            (Cow::Owned(xs), Cow::Owned(w.select_rows(&p.indices)))
        }
    };
    let k = xs.cols();

    // dW_s = X_sᵀ dY, shared dimension: batch.
    let (dws, kb) = match backward_policy {
        None => (backend.matmul_tn(&xs, dy)?, batch),
        Some(bp) => {
            let q = layer_plan(&products(&row_norms(&xs), &row_norms(dy)), bp, rng)?;
            let mut xq = xs.select_rows(&q.indices);
            scale_rows(&mut xq, &q.scales);
            (backend.matmul_tn(&xq, &dy.select_rows(&q.indices))?, q.k())
        }
    };
    let weight_macs = MacPair {
        exact: fc_macs(inputs, batch, outputs),
        actual: fc_macs(k, kb, outputs),
    };
    let weight = match plan {
        None => dws,
        Some(p) => {
            let mut dw = Matrix::zeros(inputs, outputs);
            for (t, &i) in p.indices.iter().enumerate() {
                let src = dws.row(t);
                let dst = &mut dw.data_mut()[i * outputs..(i + 1) * outputs];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            dw
        }
    };

    if !want_input {
        return Ok(LayerGrads {
            input: None,
            weight,
            data_macs: MacPair::default(),
            weight_macs,
        });
    }

    // dX_s = dY W_sᵀ, shared dimension: outputs.
    let (dxs, ko) = match backward_policy {
        None => (backend.matmul_nt(dy, &ws)?, outputs),
        Some(bp) => {
            let r = layer_plan(&products(&col_norms(dy), &col_norms(&ws)), bp, rng)?;
            let mut dyr = dy.select_cols(&r.indices);
            scale_cols(&mut dyr, &r.scales);
            (backend.matmul_nt(&dyr, &ws.select_cols(&r.indices))?, r.k())
        }
    };
    let data_macs = MacPair {
        exact: fc_macs(batch, outputs, inputs),
        actual: fc_macs(batch, ko, k),
    };
    let input = match plan {
        None => dxs,
        Some(p) => {
            let mut dx = Matrix::zeros(batch, inputs);
            for b in 0..batch {
                let src = dxs.row(b);
                let dst = &mut dx.data_mut()[b * inputs..(b + 1) * inputs];
                for ((&i, s), v) in p.indices.iter().zip(&p.scales).zip(src) {
                    dst[i] += v * s;
                }
            }
            dx
        }
    };
    Ok(LayerGrads {
        input: Some(input),
        weight,
        data_macs,
        weight_macs,
    })
}

/// Backward pass of an exact `X W` restricted to the `k` output columns with
/// the largest gradient norms, unscaled.
pub fn meprop_backward_fc(backend: Backend, x: &Matrix, w: &Matrix, dy: &Matrix, k: usize) -> Result<(Matrix, Matrix)> {
    let g = meprop_backward_fc_with(backend, x, w, dy, k, true)?;
    Ok((g.input.expect("input gradient requested"), g.weight))
}

pub fn meprop_backward_fc_with(
    backend: Backend,
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    k: usize,
    want_input: bool,
) -> Result<LayerGrads<Matrix>> {
    let (batch, inputs) = x.shape();
    let outputs = w.cols();
    if w.rows() != inputs || dy.shape() != (batch, outputs) {
        return Err(Error::shape(format!(
            "fc backward: X {batch}x{inputs}, W {}x{outputs}, dY {}x{}",
            w.rows(),
            dy.rows(),
            dy.cols()
        )));
    }
    let sel = topk_plan(&col_norms(dy), k)?;
    let dys = dy.select_cols(&sel.indices);
    let dws = backend.matmul_tn(x, &dys)?;
    let mut weight = Matrix::zeros(inputs, outputs);
    for i in 0..inputs {
        for (t, &o) in sel.indices.iter().enumerate() {
            weight.set(i, o, dws.get(i, t));
        }
    }
    let weight_macs = MacPair {
        exact: fc_macs(inputs, batch, outputs),
        actual: fc_macs(inputs, batch, k),
    };
    let (input, data_macs) = if want_input {
        let dx = backend.matmul_nt(&dys, &w.select_cols(&sel.indices))?;
        let macs = MacPair {
            exact: fc_macs(batch, outputs, inputs),
            actual: fc_macs(batch, k, inputs),
        };
        (Some(dx), macs)
    } else {
        (None, MacPair::default())
    };
    Ok(LayerGrads {
        input,
        weight,
        data_macs,
        weight_macs,
    })
}

fn conv_macs(input: [usize; 4], kernel: [usize; 4], pad: PaddingMode) -> Result<u64> {
    Ok(ConvGeometry::new(input, kernel, pad)?.macs())
}

/// Convolution with the input-channel dimension optionally sampled.
pub fn forward_conv(
    backend: Backend,
    input: &Tensor4,
    kernel: &Tensor4,
    policy: Option<&Policy>,
    pad: PaddingMode,
    rng: &mut Rng,
) -> Result<(Tensor4, Option<SamplingPlan>)> {
    ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    match policy {
        None => Ok((backend.conv2d(input, kernel, pad)?, None)),
        Some(policy) => {
            let plan = layer_plan(&channel_scores(input, kernel)?, policy, rng)?;
            let out = apply_conv_layer_plan(backend, input, kernel, &plan, pad)?;
            Ok((out, Some(plan)))
        }
    }
}

pub(crate) fn apply_conv_layer_plan(
    backend: Backend,
    input: &Tensor4,
    kernel: &Tensor4,
    plan: &SamplingPlan,
    pad: PaddingMode,
) -> Result<Tensor4> {
    check_plan(plan, input.dims()[3], "input channels")?;
    let roots = plan.sqrt_scales();
    let i_s = input.gather_scaled(3, &plan.indices, &roots);
    let k_s = kernel.gather_scaled(2, &plan.indices, &roots);
    backend.conv2d(&i_s, &k_s, pad)
}

pub fn conv_forward_macs(
    input: [usize; 4],
    kernel: [usize; 4],
    pad: PaddingMode,
    plan: Option<&SamplingPlan>,
) -> Result<MacPair> {
    let exact = conv_macs(input, kernel, pad)?;
    let k = plan.map_or(input[3], |p| p.k());
    Ok(MacPair {
        exact,
        actual: exact / input[3] as u64 * k as u64,
    })
}

/// Gradients of a (sampled) convolution with respect to input and kernel.
#[allow(clippy::too_many_arguments)]
pub fn backward_conv(
    backend: Backend,
    plan: Option<&SamplingPlan>,
    input: &Tensor4,
    kernel: &Tensor4,
    grad_out: &Tensor4,
    backward_policy: Option<&Policy>,
    pad: PaddingMode,
    rng: &mut Rng,
) -> Result<(Tensor4, Tensor4)> {
    let g = backward_conv_with(backend, plan, input, kernel, grad_out, backward_policy, pad, rng, true)?;
    Ok((g.input.expect("input gradient requested"), g.weight))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_conv_with(
    backend: Backend,
    plan: Option<&SamplingPlan>,
    input: &Tensor4,
    kernel: &Tensor4,
    grad_out: &Tensor4,
    backward_policy: Option<&Policy>,
    pad: PaddingMode,
    rng: &mut Rng,
    want_input: bool,
) -> Result<LayerGrads<Tensor4>> {
    let geom = ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    if grad_out.dims() != geom.output_dims() {
        return Err(Error::shape(format!(
            "conv backward: output gradient {:?}, expected {:?}",
            grad_out.dims(),
            geom.output_dims()
        )));
    }
    let ic = input.dims()[3];
    if let Some(p) = plan {
        check_plan(p, ic, "input channels")?;
    }
    let (is, ks): (Cow<Tensor4>, Cow<Tensor4>) = match plan {
        None => (Cow::Borrowed(input), Cow::Borrowed(kernel)),
        Some(p) => {
            let roots = p.sqrt_scales();
            (
                Cow::Owned(input.gather_scaled(3, &p.indices, &roots)),
                Cow::Owned(kernel.gather_scaled(2, &p.indices, &roots)),
            )
        }
    };
    let exact = geom.macs();

    // Kernel gradient, shared dimension: batch.
    let (dks, weight_actual) = match backward_policy {
        None => (
            backend.conv2d_backward_weight(&is, grad_out, ks.dims(), pad)?,
            conv_macs(is.dims(), ks.dims(), pad)?,
        ),
        Some(bp) => {
            let scores = products(&axis_sum_squares(&is, 0), &axis_sum_squares(grad_out, 0));
            let scores: Vec<f64> = scores.into_iter().map(f64::sqrt).collect();
            let q = layer_plan(&scores, bp, rng)?;
            let roots = q.sqrt_scales();
            let iq = is.gather_scaled(0, &q.indices, &roots);
            let gq = grad_out.gather_scaled(0, &q.indices, &roots);
            (
                backend.conv2d_backward_weight(&iq, &gq, ks.dims(), pad)?,
                conv_macs(iq.dims(), ks.dims(), pad)?,
            )
        }
    };
    let weight = match plan {
        None => dks,
        Some(p) => {
            let mut dk = Tensor4::zeros(kernel.dims());
            dk.scatter_add_scaled(2, &p.indices, &p.sqrt_scales(), &dks);
            dk
        }
    };
    let weight_macs = MacPair {
        exact,
        actual: weight_actual,
    };
    if !want_input {
        return Ok(LayerGrads {
            input: None,
            weight,
            data_macs: MacPair::default(),
            weight_macs,
        });
    }

    // Input gradient, shared dimension: output channels.
    let (dis, data_actual) = match backward_policy {
        None => (
            backend.conv2d_backward_data(grad_out, &ks, is.dims(), pad)?,
            conv_macs(is.dims(), ks.dims(), pad)?,
        ),
        Some(bp) => {
            let scores = products(&axis_sum_squares(grad_out, 3), &axis_sum_squares(&ks, 3));
            let scores: Vec<f64> = scores.into_iter().map(f64::sqrt).collect();
            let r = layer_plan(&scores, bp, rng)?;
            let roots = r.sqrt_scales();
            let gr = grad_out.gather_scaled(3, &r.indices, &roots);
            let kr = ks.gather_scaled(3, &r.indices, &roots);
            (
                backend.conv2d_backward_data(&gr, &kr, is.dims(), pad)?,
                conv_macs(is.dims(), kr.dims(), pad)?,
            )
        }
    };
    let input_grad = match plan {
        None => dis,
        Some(p) => {
            let mut di = Tensor4::zeros(input.dims());
            di.scatter_add_scaled(3, &p.indices, &p.sqrt_scales(), &dis);
            di
        }
    };
    Ok(LayerGrads {
        input: Some(input_grad),
        weight,
        data_macs: MacPair {
            exact,
            actual: data_actual,
        },
        weight_macs,
    })
}
