//! Central finite-difference check of network gradients.

use crate::error::Result;
use crate::nn::network::{Network, Params, Plans};
use crate::rng::Rng;
use crate::sampling::SamplingPlan;
use crate::tensor::{Backend, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|fd − g| / max(|fd|, |g|, floor)` over all parameters.
    pub max_rel_error: f64,
    pub parameters: usize,
}

/// Compares the gradients of `net` under fixed `plans` with central
/// differences of step `h` on every weight and bias. `seed` fixes dropout
/// masks so every loss evaluation sees the same function.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    net: &Network,
    backend: Backend,
    x: &Tensor4,
    labels: &[u8],
    plans: &[Option<SamplingPlan>],
    h: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheck> {
    let step = net.step(backend, x, labels, Plans::Fixed(plans), &mut Rng::new(seed))?;
    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut parameters = 0;
    for (layer, grads) in step.grads.iter().enumerate() {
        let Some(grads) = grads else { continue };
        for (part, analytic) in [(0, &grads.weight), (1, &grads.bias)] {
            for (j, &g) in analytic.iter().enumerate() {
                let original = value(&probe, layer, part, j);
                set(&mut probe, layer, part, j, original + h);
                let up = probe.training_loss(backend, x, labels, Plans::Fixed(plans), &mut Rng::new(seed))?;
                set(&mut probe, layer, part, j, original - h);
                let down = probe.training_loss(backend, x, labels, Plans::Fixed(plans), &mut Rng::new(seed))?;
                set(&mut probe, layer, part, j, original);
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(floor);
                max_rel = max_rel.max(rel);
                parameters += 1;
            }
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        parameters,
    })
}

fn slot(net: &mut Network, layer: usize, part: usize, j: usize) -> &mut f64 {
    match net.params_mut()[layer].as_mut().expect("weighted layer") {
        Params::Fc { w, b } => {
            if part == 0 {
                &mut w.data_mut()[j]
            } else {
                &mut b[j]
            }
        }
        Params::Conv { k, b } => {
            if part == 0 {
                &mut k.data_mut()[j]
            } else {
                &mut b[j]
            }
        }
    }
}

fn value(net: &Network, layer: usize, part: usize, j: usize) -> f64 {
    let p = net.params()[layer].as_ref().expect("weighted layer");
    if part == 0 {
        p.weight()[j]
    } else {
        p.bias()[j]
    }
}

fn set(net: &mut Network, layer: usize, part: usize, j: usize, v: f64) {
    *slot(net, layer, part, j) = v;
}
