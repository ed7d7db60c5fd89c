//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor, created on first use.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// One update of every parameter tensor from its gradient.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() {
            return Err(Error::shape(format!(
                "parameter tensor {i}: {} values, gradient {}, state {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let g = vec![0.0; 3];
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is lr / (1 + eps).
        let mut p = vec![0.0];
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[&[1.0]], &mut state, &AdamHyper::default()).unwrap();
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut p = vec![1.0, -2.0];
            let mut state = AdamState::default();
            for step in 0..50 {
                let g = [p[0] * 2.0 + step as f64 * 0.01, (p[1] - 3.0).sin()];
                adam_step(&mut [&mut p], &[&g], &mut state, &AdamHyper::default()).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0];
        let mut state = AdamState::default();
        let hyper = AdamHyper {
            lr: 0.05,
            ..AdamHyper::default()
        };
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            adam_step(&mut [&mut p], &[&g], &mut state, &hyper).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mismatched_lengths() {
        let mut p = vec![0.0; 2];
        let mut state = AdamState::default();
        assert!(adam_step(&mut [&mut p], &[&[1.0]], &mut state, &AdamHyper::default()).is_err());
    }
}
