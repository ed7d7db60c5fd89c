//! Layer stacks, their parameters, and one forward/backward step.

use crate::error::{Error, Result};
use crate::nn::activations::{
    argmax_rows, dropout_mask, maxpool2, maxpool2_backward, relu, relu_backward, softmax_cross_entropy,
};
use crate::nn::layers::{
    apply_conv_layer_plan, apply_fc_plan, backward_conv_with, backward_fc_with, conv_forward_macs, fc_forward_macs,
    forward_conv, forward_fc, meprop_backward_fc_with,
};
use crate::nn::ledger::{ComputeLedger, Pass};
use crate::rng::Rng;
use crate::sampling::{Policy, SamplingPlan};
use crate::tensor::{Backend, ConvGeometry, Matrix, PaddingMode, Tensor4};

/// How the backward products of a fully-connected layer are reduced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardSampling {
    /// Both backward products sampled over their own shared dimension.
    Crs(Policy),
    /// Output columns kept by gradient norm alone; the forward stays exact.
    MeProp(Policy),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Fc {
        inputs: usize,
        outputs: usize,
        forward: Option<Policy>,
        backward: Option<BackwardSampling>,
    },
    Conv {
        kh: usize,
        kw: usize,
        ic: usize,
        oc: usize,
        pad: PaddingMode,
        forward: Option<Policy>,
        backward: Option<Policy>,
    },
    Relu,
    /// 2×2, stride 2.
    MaxPool,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Loss head; must be last.
    SoftmaxCrossEntropy,
}

impl LayerSpec {
    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Fc {
            inputs,
            outputs,
            forward: None,
            backward: None,
        }
    }

    pub fn conv(kh: usize, kw: usize, ic: usize, oc: usize, pad: PaddingMode) -> Self {
        LayerSpec::Conv {
            kh,
            kw,
            ic,
            oc,
            pad,
            forward: None,
            backward: None,
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Fc { .. } | LayerSpec::Conv { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::SoftmaxCrossEntropy => "softmax-ce",
        }
    }
}

/// Per-example activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `H×W×C` feature maps.
    Map([usize; 3]),
    Flat(usize),
}

/// Shape after every layer, validating the stack against `input`.
pub fn infer_shapes(specs: &[LayerSpec], input: [usize; 3]) -> Result<Vec<Shape>> {
    let mut shape = Shape::Map(input);
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let bad = |msg: String| Error::shape(format!("layer {i} ({}): {msg}", spec.name()));
        shape = match (*spec, shape) {
            (
                LayerSpec::Fc {
                    inputs,
                    outputs,
                    forward,
                    backward,
                },
                Shape::Flat(n),
            ) => {
                if inputs != n || outputs == 0 {
                    return Err(bad(format!("expects {inputs} inputs, gets {n}")));
                }
                if forward.is_some() && matches!(backward, Some(BackwardSampling::MeProp(_))) {
                    return Err(bad("gradient-only backward sampling needs an exact forward".into()));
                }
                Shape::Flat(outputs)
            }
            (
                LayerSpec::Conv {
                    kh, kw, ic, oc, pad, ..
                },
                Shape::Map([h, w, c]),
            ) => {
                if ic != c || oc == 0 {
                    return Err(bad(format!("expects {ic} channels, gets {c}")));
                }
                let g = ConvGeometry::new([1, h, w, c], [kh, kw, ic, oc], pad).map_err(|e| bad(e.to_string()))?;
                Shape::Map([g.oh, g.ow, oc])
            }
            (LayerSpec::Relu, s) => s,
            (LayerSpec::MaxPool, Shape::Map([h, w, c])) if h >= 2 && w >= 2 => Shape::Map([h / 2, w / 2, c]),
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(bad(format!("rate {rate} outside [0, 1)")));
                }
                s
            }
            (LayerSpec::Flatten, Shape::Map([h, w, c])) => Shape::Flat(h * w * c),
            (LayerSpec::Flatten, s @ Shape::Flat(_)) => s,
            (LayerSpec::SoftmaxCrossEntropy, s @ Shape::Flat(_)) if i + 1 == specs.len() => s,
            (_, s) => return Err(bad(format!("cannot follow {s:?}"))),
        };
        out.push(shape);
    }
    if !matches!(specs.last(), Some(LayerSpec::SoftmaxCrossEntropy)) {
        return Err(Error::shape("layer stack must end with softmax-ce"));
    }
    Ok(out)
}

/// Weights and bias of one weighted layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Fc { w: Matrix, b: Vec<f64> },
    Conv { k: Tensor4, b: Vec<f64> },
}

impl Params {
    pub fn weight(&self) -> &[f64] {
        match self {
            Params::Fc { w, .. } => w.data(),
            Params::Conv { k, .. } => k.data(),
        }
    }

    pub fn bias(&self) -> &[f64] {
        match self {
            Params::Fc { b, .. } | Params::Conv { b, .. } => b,
        }
    }

    fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        match self {
            Params::Fc { w, b } => (w.data_mut(), b),
            Params::Conv { k, b } => (k.data_mut(), b),
        }
    }
}

/// Gradients of one weighted layer, flat, same order as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Act {
    Flat(Matrix),
    Map(Tensor4),
}

impl Act {
    fn values(&self) -> &[f64] {
        match self {
            Act::Flat(m) => m.data(),
            Act::Map(t) => t.data(),
        }
    }

    fn with_values(&self, values: Vec<f64>) -> Act {
        match self {
            Act::Flat(m) => Act::Flat(Matrix::from_parts(m.rows(), m.cols(), values)),
            Act::Map(t) => Act::Map(Tensor4::from_parts(t.dims(), values)),
        }
    }

    fn flat(self) -> Result<Matrix> {
        match self {
            Act::Flat(m) => Ok(m),
            Act::Map(_) => Err(Error::shape("expected flat activations")),
        }
    }

    fn map(self) -> Result<Tensor4> {
        match self {
            Act::Map(t) => Ok(t),
            Act::Flat(_) => Err(Error::shape("expected feature maps")),
        }
    }
}

/// Source of forward sampling plans during a training step.
#[derive(Debug, Clone, Copy)]
pub enum Plans<'a> {
    /// Draw a fresh plan for every sampled layer.
    Draw,
    /// Reuse the given plan per layer (`None` for exact layers).
    Fixed(&'a [Option<SamplingPlan>]),
}

#[derive(Debug)]
enum Cache {
    Fc { x: Matrix },
    Conv { x: Tensor4 },
    Relu { y: Act },
    Pool { dims: [usize; 4], argmax: Vec<usize> },
    Dropout { mask: Vec<f64> },
    Flatten { dims: [usize; 4] },
    Head,
}

/// Result of one training forward/backward pass.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub loss: f64,
    /// One entry per layer; `Some` for weighted layers.
    pub grads: Vec<Option<ParamGrads>>,
    /// Forward plan per layer.
    pub plans: Vec<Option<SamplingPlan>>,
    pub ledger: ComputeLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    specs: Vec<LayerSpec>,
    input: [usize; 3],
    params: Vec<Option<Params>>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(specs: Vec<LayerSpec>, input: [usize; 3], rng: &mut Rng) -> Result<Self> {
        infer_shapes(&specs, input)?;
        let params = specs
            .iter()
            .map(|spec| match *spec {
                LayerSpec::Fc { inputs, outputs, .. } => {
                    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                    let w = Matrix::from_fn(inputs, outputs, |_, _| rng.uniform_range(-limit, limit));
                    Some(Params::Fc {
                        w,
                        b: vec![0.0; outputs],
                    })
                }
                LayerSpec::Conv { kh, kw, ic, oc, .. } => {
                    let limit = (6.0 / (kh * kw * (ic + oc)) as f64).sqrt();
                    let k = Tensor4::from_fn([kh, kw, ic, oc], |_| rng.uniform_range(-limit, limit));
                    Some(Params::Conv { k, b: vec![0.0; oc] })
                }
                _ => None,
            })
            .collect();
        Ok(Self { specs, input, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    /// Every weight and bias slice, in layer order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for p in self.params.iter_mut().flatten() {
            let (w, b) = p.parts_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    fn first_weighted(&self) -> usize {
        self.specs
            .iter()
            .position(LayerSpec::is_weighted)
            .unwrap_or(self.specs.len())
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let [_, h, w, c] = x.dims();
        if [h, w, c] != self.input {
            return Err(Error::shape(format!(
                "input examples are {h}x{w}x{c}, network expects {:?}",
                self.input
            )));
        }
        Ok(())
    }

    /// Exact logits with dropout disabled.
    pub fn logits(&self, backend: Backend, x: &Tensor4) -> Result<Matrix> {
        self.check_input(x)?;
        let mut act = Act::Map(x.clone());
        for (spec, params) in self.specs.iter().zip(&self.params) {
            act = match (spec, params) {
                (LayerSpec::Fc { .. }, Some(Params::Fc { w, b })) => {
                    Act::Flat(add_row_bias(backend.matmul(&act.flat()?, w)?, b))
                }
                (LayerSpec::Conv { pad, .. }, Some(Params::Conv { k, b })) => {
                    Act::Map(add_channel_bias(backend.conv2d(&act.map()?, k, *pad)?, b))
                }
                (LayerSpec::Relu, _) => act.with_values(relu(act.values())),
                (LayerSpec::MaxPool, _) => Act::Map(maxpool2(&act.map()?)?.0),
                (LayerSpec::Dropout { .. }, _) | (LayerSpec::SoftmaxCrossEntropy, _) => act,
                (LayerSpec::Flatten, _) => flatten(act),
                _ => unreachable!("parameters match their layer"),
            };
        }
        act.flat()
    }

    /// Predicted classes.
    pub fn predict(&self, backend: Backend, x: &Tensor4) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(backend, x)?))
    }

    /// Training loss with dropout active and sampled products, without
    /// gradients.
    pub fn training_loss(
        &self,
        backend: Backend,
        x: &Tensor4,
        labels: &[u8],
        plans: Plans,
        rng: &mut Rng,
    ) -> Result<f64> {
        Ok(self.forward_train(backend, x, labels, plans, rng)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn forward_train(
        &self,
        backend: Backend,
        x: &Tensor4,
        labels: &[u8],
        plans: Plans,
        rng: &mut Rng,
    ) -> Result<(f64, Matrix, Vec<Cache>, Vec<Option<SamplingPlan>>, ComputeLedger)> {
        self.check_input(x)?;
        if let Plans::Fixed(p) = plans {
            if p.len() != self.specs.len() {
                return Err(Error::shape(format!(
                    "{} fixed plans for {} layers",
                    p.len(),
                    self.specs.len()
                )));
            }
        }
        let mut ledger = ComputeLedger::new();
        let mut caches = Vec::with_capacity(self.specs.len());
        let mut used_plans = Vec::with_capacity(self.specs.len());
        let mut act = Act::Map(x.clone());
        for (i, (spec, params)) in self.specs.iter().zip(&self.params).enumerate() {
            let mut plan = None;
            let (next, cache) = match (spec, params) {
                (LayerSpec::Fc { forward, .. }, Some(Params::Fc { w, b })) => {
                    let x = act.flat()?;
                    let y = match plans {
                        Plans::Fixed(p) => match &p[i] {
                            Some(fixed) => {
                                plan = Some(fixed.clone());
                                apply_fc_plan(backend, &x, w, fixed)?
                            }
                            None => backend.matmul(&x, w)?,
                        },
                        Plans::Draw => {
                            let (y, p) = forward_fc(backend, &x, w, forward.as_ref(), rng)?;
                            plan = p;
                            y
                        }
                    };
                    let m = fc_forward_macs(x.rows(), x.cols(), w.cols(), plan.as_ref());
                    ledger.record(i, Pass::Forward, m.exact, m.actual);
                    (Act::Flat(add_row_bias(y, b)), Cache::Fc { x })
                }
                (LayerSpec::Conv { forward, pad, .. }, Some(Params::Conv { k, b })) => {
                    let x = act.map()?;
                    let y = match plans {
                        Plans::Fixed(p) => match &p[i] {
                            Some(fixed) => {
                                plan = Some(fixed.clone());
                                apply_conv_layer_plan(backend, &x, k, fixed, *pad)?
                            }
                            None => backend.conv2d(&x, k, *pad)?,
                        },
                        Plans::Draw => {
                            let (y, p) = forward_conv(backend, &x, k, forward.as_ref(), *pad, rng)?;
                            plan = p;
                            y
                        }
                    };
                    let m = conv_forward_macs(x.dims(), k.dims(), *pad, plan.as_ref())?;
                    ledger.record(i, Pass::Forward, m.exact, m.actual);
                    (Act::Map(add_channel_bias(y, b)), Cache::Conv { x })
                }
                (LayerSpec::Relu, _) => {
                    let y = act.with_values(relu(act.values()));
                    (y.clone(), Cache::Relu { y })
                }
                (LayerSpec::MaxPool, _) => {
                    let x = act.map()?;
                    let (y, argmax) = maxpool2(&x)?;
                    (Act::Map(y), Cache::Pool { dims: x.dims(), argmax })
                }
                (LayerSpec::Dropout { rate }, _) => {
                    let mask = dropout_mask(act.values().len(), *rate, rng);
                    let y: Vec<f64> = act.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (act.with_values(y), Cache::Dropout { mask })
                }
                (LayerSpec::Flatten, _) => {
                    let dims = match &act {
                        Act::Map(t) => t.dims(),
                        Act::Flat(m) => [m.rows(), 1, 1, m.cols()],
                    };
                    (flatten(act), Cache::Flatten { dims })
                }
                (LayerSpec::SoftmaxCrossEntropy, _) => (act, Cache::Head),
                _ => unreachable!("parameters match their layer"),
            };
            act = next;
            caches.push(cache);
            used_plans.push(plan);
        }
        let logits = act.flat()?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, logits, caches, used_plans, ledger))
    }

    /// Loss and gradients of every weighted layer for one batch.
    pub fn step(
        &self,
        backend: Backend,
        x: &Tensor4,
        labels: &[u8],
        plans: Plans,
        rng: &mut Rng,
    ) -> Result<StepResult> {
        let (loss, logits, caches, used_plans, mut ledger) = self.forward_train(backend, x, labels, plans, rng)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let first = self.first_weighted();
        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.specs.len()];
        let mut grad = Act::Flat(dlogits);
        for i in (first..self.specs.len()).rev() {
            let want_input = i > first;
            grad = match (&self.specs[i], &self.params[i], &caches[i]) {
                (LayerSpec::SoftmaxCrossEntropy, _, Cache::Head) => grad,
                (LayerSpec::Fc { backward, .. }, Some(Params::Fc { w, .. }), Cache::Fc { x }) => {
                    let dy = grad.flat()?;
                    let bias = column_sums(&dy);
                    let g = match backward {
                        Some(BackwardSampling::MeProp(p)) => {
                            meprop_backward_fc_with(backend, x, w, &dy, p.sample_count(w.cols()), want_input)?
                        }
                        other => {
                            let bp = match other {
                                Some(BackwardSampling::Crs(p)) => Some(p),
                                _ => None,
                            };
                            backward_fc_with(backend, used_plans[i].as_ref(), x, w, &dy, bp, rng, want_input)?
                        }
                    };
                    ledger.record(i, Pass::BackwardWeight, g.weight_macs.exact, g.weight_macs.actual);
                    if want_input {
                        ledger.record(i, Pass::BackwardData, g.data_macs.exact, g.data_macs.actual);
                    }
                    grads[i] = Some(ParamGrads {
                        weight: g.weight.into_data(),
                        bias,
                    });
                    match g.input {
                        Some(dx) => Act::Flat(dx),
                        None => break,
                    }
                }
                (LayerSpec::Conv { backward, pad, .. }, Some(Params::Conv { k, .. }), Cache::Conv { x }) => {
                    let dy = grad.map()?;
                    let bias = channel_sums(&dy);
                    let g = backward_conv_with(
                        backend,
                        used_plans[i].as_ref(),
                        x,
                        k,
                        &dy,
                        backward.as_ref(),
                        *pad,
                        rng,
                        want_input,
                    )?;
                    ledger.record(i, Pass::BackwardWeight, g.weight_macs.exact, g.weight_macs.actual);
                    if want_input {
                        ledger.record(i, Pass::BackwardData, g.data_macs.exact, g.data_macs.actual);
                    }
                    grads[i] = Some(ParamGrads {
                        weight: g.weight.into_data(),
                        bias,
                    });
                    match g.input {
                        Some(dx) => Act::Map(dx),
                        None => break,
                    }
                }
                (LayerSpec::Relu, _, Cache::Relu { y }) => y.with_values(relu_backward(y.values(), grad.values())),
                (LayerSpec::MaxPool, _, Cache::Pool { dims, argmax }) => {
                    Act::Map(maxpool2_backward(*dims, argmax, &grad.map()?))
                }
                (LayerSpec::Dropout { .. }, _, Cache::Dropout { mask }) => {
                    let g: Vec<f64> = grad.values().iter().zip(mask).map(|(g, m)| g * m).collect();
                    grad.with_values(g)
                }
                (LayerSpec::Flatten, _, Cache::Flatten { dims }) => {
                    Act::Map(Tensor4::from_parts(*dims, grad.flat()?.into_data()))
                }
                _ => unreachable!("caches match their layer"),
            };
        }
        Ok(StepResult {
            loss,
            grads,
            plans: used_plans,
            ledger,
        })
    }
}

fn flatten(act: Act) -> Act {
    match act {
        Act::Map(t) => {
            let [b, h, w, c] = t.dims();
            Act::Flat(Matrix::from_parts(b, h * w * c, t.into_data()))
        }
        flat => flat,
    }
}

fn add_row_bias(mut y: Matrix, b: &[f64]) -> Matrix {
    let cols = y.cols();
    for row in y.data_mut().chunks_exact_mut(cols) {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

fn add_channel_bias(mut y: Tensor4, b: &[f64]) -> Tensor4 {
    let c = y.dims()[3];
    for px in y.data_mut().chunks_exact_mut(c) {
        for (v, bias) in px.iter_mut().zip(b) {
            *v += bias;
        }
    }
    y
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    acc
}

fn channel_sums(t: &Tensor4) -> Vec<f64> {
    let c = t.dims()[3];
    let mut acc = vec![0.0; c];
    for px in t.data().chunks_exact(c) {
        for (a, v) in acc.iter_mut().zip(px) {
            *a += v;
        }
    }
    acc
}

/// MACs one training step would record, from shapes and sample counts alone.
///
/// Random norm-proportional policies without replacement are counted at
/// their nominal `k`.
pub fn projected_ledger(specs: &[LayerSpec], input: [usize; 3], batch: usize) -> Result<ComputeLedger> {
    let shapes = infer_shapes(specs, input)?;
    let first = specs.iter().position(LayerSpec::is_weighted);
    let mut ledger = ComputeLedger::new();
    for (i, spec) in specs.iter().enumerate() {
        let shape_in = if i == 0 { Shape::Map(input) } else { shapes[i - 1] };
        let want_input = Some(i) != first;
        match (*spec, shape_in) {
            (
                LayerSpec::Fc {
                    inputs,
                    outputs,
                    forward,
                    backward,
                },
                _,
            ) => {
                let exact = (batch * inputs * outputs) as u64;
                let k = forward.map_or(inputs, |p| p.sample_count(inputs));
                ledger.record(i, Pass::Forward, exact, (batch * k * outputs) as u64);
                let (kb, ko, kd) = match backward {
                    None => (batch, outputs, k),
                    Some(BackwardSampling::Crs(p)) => (p.sample_count(batch), p.sample_count(outputs), k),
                    Some(BackwardSampling::MeProp(p)) => {
                        let ko = p.sample_count(outputs);
                        ledger.record(i, Pass::BackwardWeight, exact, (inputs * batch * ko) as u64);
                        if want_input {
                            ledger.record(i, Pass::BackwardData, exact, (batch * ko * inputs) as u64);
                        }
                        continue;
                    }
                };
                ledger.record(i, Pass::BackwardWeight, exact, (k * kb * outputs) as u64);
                if want_input {
                    ledger.record(i, Pass::BackwardData, exact, (batch * ko * kd) as u64);
                }
            }
            (
                LayerSpec::Conv {
                    kh,
                    kw,
                    ic,
                    oc,
                    pad,
                    forward,
                    backward,
                },
                Shape::Map([h, w, _]),
            ) => {
                let g = ConvGeometry::new([batch, h, w, ic], [kh, kw, ic, oc], pad)?;
                let exact = g.macs();
                let per = (g.oh * g.ow * kh * kw) as u64;
                let k = forward.map_or(ic, |p| p.sample_count(ic)) as u64;
                ledger.record(i, Pass::Forward, exact, batch as u64 * per * oc as u64 * k);
                let (kb, ko) = match backward {
                    None => (batch, oc),
                    Some(p) => (p.sample_count(batch), p.sample_count(oc)),
                };
                ledger.record(i, Pass::BackwardWeight, exact, kb as u64 * per * oc as u64 * k);
                if want_input {
                    ledger.record(i, Pass::BackwardData, exact, batch as u64 * per * ko as u64 * k);
                }
            }
            _ => {}
        }
    }
    Ok(ledger)
}
