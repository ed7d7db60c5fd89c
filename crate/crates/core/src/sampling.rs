//! Sampling distributions and sampling plans for column-row and
//! input-channel sampling.
//!
//! A [`Policy`] names one variant: uniform or norm-proportional (NPS)
//! probabilities, with or without replacement, with or without the
//! `1/(k p_i)` scale, or deterministic top-k. Drawing a policy against a
//! [`Distribution`] yields a [`SamplingPlan`]: the chosen indices and their
//! scale factors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::approx::correction_terms;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{channel_norms, ChannelRole, ConvGeometry, PaddingMode, Tensor4};

const SUM_TOLERANCE: f64 = 1e-12;

/// Probability vector over column-row pairs or input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over an empty set");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes non-negative weights; all-zero weights give the uniform
    /// distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("empty weight vector"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::domain(format!(
                "weights must be finite and non-negative, got {w}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Ok(Self::uniform(weights.len()));
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn nonzero(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Uniform,
    Nps,
    TopK,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Uniform => "uniform",
            Selection::Nps => "nps",
            Selection::TopK => "topk",
        }
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Selection::Uniform),
            "nps" => Ok(Selection::Nps),
            "topk" | "top-k" => Ok(Selection::TopK),
            other => Err(Error::domain(format!("unknown selection `{other}`"))),
        }
    }
}

/// Requested sample count, as a fraction of the shared dimension or absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Ratio(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub selection: Selection,
    pub replacement: bool,
    pub scaled: bool,
    pub size: SampleSize,
    pub min_k: usize,
}

impl Policy {
    pub fn new(selection: Selection, replacement: bool, scaled: bool, size: SampleSize) -> Result<Self> {
        match size {
            SampleSize::Ratio(r) if !(r > 0.0 && r <= 1.0) => {
                return Err(Error::domain(format!("sampling ratio must be in (0, 1], got {r}")));
            }
            SampleSize::Count(0) => return Err(Error::domain("sample count must be at least 1")),
            _ => {}
        }
        let (replacement, scaled) = match selection {
            Selection::TopK => (false, false),
            _ => (replacement, scaled),
        };
        Ok(Self {
            selection,
            replacement,
            scaled,
            size,
            min_k: 1,
        })
    }

    /// Deterministic top-k keeping `ratio` of the shared dimension.
    pub fn topk(ratio: f64) -> Result<Self> {
        Self::new(Selection::TopK, false, false, SampleSize::Ratio(ratio))
    }

    pub fn with_min_k(mut self, min_k: usize) -> Result<Self> {
        if min_k == 0 {
            return Err(Error::domain("min_k must be at least 1"));
        }
        self.min_k = min_k;
        Ok(self)
    }

    /// `k = max(min_k, round(ratio n))`, clamped to `n`.
    pub fn sample_count(&self, n: usize) -> usize {
        let raw = match self.size {
            SampleSize::Ratio(r) => (r * n as f64).round() as usize,
            SampleSize::Count(k) => k,
        };
        raw.max(self.min_k).min(n)
    }

    pub fn is_random(&self) -> bool {
        self.selection != Selection::TopK
    }

    /// Short stable name such as `nps-norep-unscaled` or `topk`.
    pub fn descriptor(&self) -> String {
        match self.selection {
            Selection::TopK => "topk".to_string(),
            s => format!(
                "{}-{}-{}",
                s,
                if self.replacement { "rep" } else { "norep" },
                if self.scaled { "scaled" } else { "unscaled" }
            ),
        }
    }

    /// All eight random variants followed by top-k, at one sample size.
    pub fn all_variants(size: SampleSize) -> Vec<Policy> {
        let mut out = Vec::with_capacity(9);
        for selection in [Selection::Uniform, Selection::Nps] {
            for replacement in [true, false] {
                for scaled in [true, false] {
                    out.push(Policy {
                        selection,
                        replacement,
                        scaled,
                        size,
                        min_k: 1,
                    });
                }
            }
        }
        out.push(Policy {
            selection: Selection::TopK,
            replacement: false,
            scaled: false,
            size,
            min_k: 1,
        });
        out
    }
}

/// Chosen indices (0-based) and the factor each sampled term is multiplied by.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// Size of the sampled dimension.
    pub population: usize,
    pub indices: Vec<usize>,
    pub scales: Vec<f64>,
    pub selection: Selection,
    pub replacement: bool,
    pub scaled: bool,
}

impl SamplingPlan {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// Every index once, in order, unscaled.
    pub fn full(n: usize) -> Self {
        Self {
            population: n,
            indices: (0..n).collect(),
            scales: vec![1.0; n],
            selection: Selection::TopK,
            replacement: false,
            scaled: false,
        }
    }

    /// Square roots of the scales, for splitting a scale across two operands.
    pub fn sqrt_scales(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s.sqrt()).collect()
    }

    /// Whether index `i` was sampled at least once.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.population];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// `p_i ∝ |A^(i)| |B_(i)|`.
pub fn nps_distribution(col_norms: &[f64], row_norms: &[f64]) -> Result<Distribution> {
    if col_norms.len() != row_norms.len() {
        return Err(Error::shape(format!(
            "norm vectors differ in length: {} vs {}",
            col_norms.len(),
            row_norms.len()
        )));
    }
    if col_norms.iter().chain(row_norms).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::domain("norms must be finite and non-negative"));
    }
    let products: Vec<f64> = col_norms.iter().zip(row_norms).map(|(a, b)| a * b).collect();
    Distribution::from_weights(&products)
}

/// `p_i ∝ ‖I^[i]‖_F ‖K_[i]‖_F` over input channels.
pub fn conv_nps_distribution(input: &Tensor4, kernel: &Tensor4) -> Result<Distribution> {
    channel_scores(input, kernel).and_then(|s| Distribution::from_weights(&s))
}

/// Per-channel products of input and kernel channel norms.
pub fn channel_scores(input: &Tensor4, kernel: &Tensor4) -> Result<Vec<f64>> {
    let ic = input.dims()[3];
    let kic = kernel.dims()[2];
    if ic != kic {
        return Err(Error::shape(format!("input has {ic} channels, kernel expects {kic}")));
    }
    let a = channel_norms(input, ChannelRole::Input);
    let b = channel_norms(kernel, ChannelRole::Kernel);
    Ok(a.iter().zip(&b).map(|(x, y)| x * y).collect())
}

/// Channel probabilities minimizing the expected squared Frobenius error of
/// the scaled with-replacement estimator, including the spatial correction
/// terms. Cost grows with `KH² KW²` times the output size; meant for small
/// instances.
pub fn conv_optimal_distribution(input: &Tensor4, kernel: &Tensor4, pad: PaddingMode) -> Result<Distribution> {
    ConvGeometry::new(input.dims(), kernel.dims(), pad)?;
    let terms = correction_terms(input, kernel, pad)?;
    let a = channel_norms(input, ChannelRole::Input);
    let b = channel_norms(kernel, ChannelRole::Kernel);
    let alphas: Vec<f64> = (0..a.len())
        .map(|i| {
            let radicand = a[i] * a[i] * b[i] * b[i] - terms.e_ik[i] + terms.r_ik[i];
            if radicand < 0.0 {
                log::warn!("negative radicand {radicand:e} for channel {i}; clamped to 0");
                0.0
            } else {
                radicand.sqrt()
            }
        })
        .collect();
    Distribution::from_weights(&alphas)
}

/// Indices of the `k` largest scores (ties to the lower index), ascending,
/// all scales 1.
pub fn topk_plan(scores: &[f64], k: usize) -> Result<SamplingPlan> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::domain(format!("top-k needs 1 <= k <= {n}, got {k}")));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::domain("top-k scores must be finite and non-negative"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    Ok(SamplingPlan {
        population: n,
        indices,
        scales: vec![1.0; k],
        selection: Selection::TopK,
        replacement: false,
        scaled: false,
    })
}

/// Index whose cumulative weight first exceeds `u * total`. Zero-weight
/// entries are never returned.
fn draw_index(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_nonzero = i;
            if acc > target {
                return i;
            }
        }
    }
    last_nonzero
}

/// Draws a plan from `dist` under `policy`.
///
/// With replacement: `k` i.i.d. draws. Without: sequential draws, removing
/// each drawn index and renormalizing over the rest. Scaled plans use
/// `1/(k p_i)` with the original `p_i` either way. A top-k policy picks the
/// `k` most probable indices.
pub fn draw_plan(dist: &Distribution, policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    let n = dist.len();
    let k = policy.sample_count(n);
    if policy.selection == Selection::TopK {
        return topk_plan(dist.probs(), k);
    }
    let probs = dist.probs();
    let indices = if policy.replacement {
        (0..k)
            .map(|_| draw_index(probs, 1.0, rng.uniform()))
            .collect::<Vec<_>>()
    } else {
        let nonzero = dist.nonzero();
        if nonzero < k {
            return Err(Error::Sampling(format!(
                "cannot draw {k} distinct indices from {nonzero} with nonzero probability"
            )));
        }
        let mut remaining = probs.to_vec();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = remaining.iter().sum();
            let i = draw_index(&remaining, total, rng.uniform());
            remaining[i] = 0.0;
            out.push(i);
        }
        out
    };
    let scales = if policy.scaled {
        indices.iter().map(|&i| 1.0 / (k as f64 * probs[i])).collect()
    } else {
        vec![1.0; k]
    };
    Ok(SamplingPlan {
        population: n,
        indices,
        scales,
        selection: policy.selection,
        replacement: policy.replacement,
        scaled: policy.scaled,
    })
}

/// Plan for a shared dimension whose items have the given non-negative
/// scores (norm products). Uniform ignores the scores, NPS normalizes them,
/// top-k ranks them.
pub fn plan_from_scores(scores: &[f64], policy: &Policy, rng: &mut Rng) -> Result<SamplingPlan> {
    match policy.selection {
        Selection::TopK => topk_plan(scores, policy.sample_count(scores.len())),
        Selection::Uniform => draw_plan(&Distribution::uniform(scores.len()), policy, rng),
        Selection::Nps => draw_plan(&Distribution::from_weights(scores)?, policy, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn assert_dist_close(d: &Distribution, expected: &[f64]) {
        for (a, b) in d.probs().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?} vs {expected:?}", d.probs());
        }
    }

    #[test]
    fn nps_examples() {
        assert_dist_close(&nps_distribution(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), &[0.25, 0.75]);
        assert_dist_close(
            &nps_distribution(&[2.0, 1.0, 4.0], &[1.0, 2.0, 0.5]).unwrap(),
            &[1.0 / 3.0; 3],
        );
        assert_dist_close(&nps_distribution(&[0.0, 5.0], &[1.0, 1.0]).unwrap(), &[0.0, 1.0]);
        assert_dist_close(&nps_distribution(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), &[0.5, 0.5]);
        assert!(matches!(nps_distribution(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(nps_distribution(&[-1.0], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn conv_nps_examples() {
        let single_i = Tensor4::from_fn([1, 3, 3, 1], |[_, h, w, _]| (h + w) as f64);
        let single_k = Tensor4::from_fn([2, 2, 1, 2], |_| 1.0);
        assert_dist_close(&conv_nps_distribution(&single_i, &single_k).unwrap(), &[1.0]);

        // input channel norms [2, 2], kernel channel norms [1, 3]
        let i = Tensor4::from_fn([1, 2, 2, 2], |_| 1.0);
        let k = Tensor4::from_fn([1, 1, 2, 1], |[_, _, c, _]| if c == 0 { 1.0 } else { 3.0 });
        assert_dist_close(&conv_nps_distribution(&i, &k).unwrap(), &[0.25, 0.75]);

        let k0 = Tensor4::from_fn([1, 1, 2, 1], |[_, _, c, _]| if c == 0 { 0.0 } else { 3.0 });
        assert_eq!(conv_nps_distribution(&i, &k0).unwrap().probs()[0], 0.0);

        let bad = Tensor4::zeros([1, 1, 3, 1]);
        assert!(matches!(conv_nps_distribution(&i, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn optimal_matches_nps_for_pointwise_kernels() {
        let mut rng = Rng::new(2);
        let i = Tensor4::from_fn([2, 3, 3, 4], |_| rng.normal(0.0, 1.0));
        let k = Tensor4::from_fn([1, 1, 4, 3], |_| rng.normal(0.0, 1.0));
        for pad in [PaddingMode::Valid, PaddingMode::Same] {
            let opt = conv_optimal_distribution(&i, &k, pad).unwrap();
            let nps = conv_nps_distribution(&i, &k).unwrap();
            for (a, b) in opt.probs().iter().zip(nps.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn optimal_is_uniform_for_identical_channels() {
        let i = Tensor4::from_fn([1, 4, 4, 3], |[_, h, w, _]| (h * 4 + w) as f64 * 0.1 - 0.5);
        let k = Tensor4::from_fn([2, 2, 3, 2], |[h, w, _, o]| (h + 2 * w + o) as f64 - 1.5);
        let opt = conv_optimal_distribution(&i, &k, PaddingMode::Valid).unwrap();
        assert_dist_close(&opt, &[1.0 / 3.0; 3]);
    }

    #[test]
    fn topk_examples() {
        let p = topk_plan(&[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(p.indices, vec![0, 2]);
        assert_eq!(p.scales, vec![1.0, 1.0]);
        assert_eq!(topk_plan(&[3.0, 1.0, 2.0], 3).unwrap().indices, vec![0, 1, 2]);
        assert_eq!(topk_plan(&[2.0, 2.0, 1.0], 1).unwrap().indices, vec![0]);
        assert!(matches!(topk_plan(&[1.0], 2), Err(Error::Domain(_))));
        assert!(matches!(topk_plan(&[1.0], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn sample_count_rounding_and_floor() {
        let p = Policy::topk(0.4).unwrap();
        assert_eq!(p.sample_count(784), 314);
        let b = Policy::topk(0.05).unwrap().with_min_k(10).unwrap();
        assert_eq!(b.sample_count(500), 25);
        assert_eq!(b.sample_count(50), 10);
        assert_eq!(b.sample_count(8), 8);
        assert!(Policy::topk(0.0).is_err());
        assert!(Policy::topk(1.5).is_err());
    }

    #[test]
    fn exhaustive_draw_is_permutation() {
        let mut rng = Rng::new(11);
        let dist = Distribution::from_weights(&[1.0, 5.0, 0.5, 2.0, 3.0]).unwrap();
        let policy = Policy::new(Selection::Nps, false, false, SampleSize::Ratio(1.0)).unwrap();
        let mut plan = draw_plan(&dist, &policy, &mut rng).unwrap();
        plan.indices.sort_unstable();
        assert_eq!(plan.indices, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn certain_draw() {
        let mut rng = Rng::new(0);
        let dist = Distribution::new(vec![0.0, 1.0]).unwrap();
        for replacement in [true, false] {
            let policy = Policy::new(Selection::Nps, replacement, true, SampleSize::Count(1)).unwrap();
            let plan = draw_plan(&dist, &policy, &mut rng).unwrap();
            assert_eq!(plan.indices, vec![1]);
            assert_eq!(plan.scales, vec![1.0]);
        }
    }

    #[test]
    fn too_few_nonzero_without_replacement() {
        let mut rng = Rng::new(0);
        let dist = Distribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        let policy = Policy::new(Selection::Nps, false, false, SampleSize::Count(2)).unwrap();
        assert!(matches!(draw_plan(&dist, &policy, &mut rng), Err(Error::Sampling(_))));
    }

    #[test]
    fn scales_use_original_marginals() {
        let mut rng = Rng::new(4);
        let dist = Distribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let policy = Policy::new(Selection::Nps, false, true, SampleSize::Count(3)).unwrap();
        let plan = draw_plan(&dist, &policy, &mut rng).unwrap();
        for (&i, &s) in plan.indices.iter().zip(&plan.scales) {
            assert_eq!(s, 1.0 / (3.0 * dist.probs()[i]));
        }
    }

    #[test]
    fn with_replacement_frequencies() {
        // 10^5 trials of k = 2: index 1 frequency 0.75 ± 0.01.
        let dist = Distribution::new(vec![0.25, 0.75]).unwrap();
        let policy = Policy::new(Selection::Nps, true, true, SampleSize::Count(2)).unwrap();
        let root = Rng::new(99);
        let mut hits = 0usize;
        let trials = 100_000;
        for t in 0..trials {
            let mut rng = root.derive(t as u64);
            let plan = draw_plan(&dist, &policy, &mut rng).unwrap();
            hits += plan.indices.iter().filter(|&&i| i == 1).count();
        }
        let freq = hits as f64 / (2 * trials) as f64;
        assert!((freq - 0.75).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn with_replacement_frequencies_within_three_sigma() {
        let weights = [0.05, 0.1, 0.15, 0.3, 0.4];
        let dist = Distribution::new(weights.to_vec()).unwrap();
        let policy = Policy::new(Selection::Nps, true, false, SampleSize::Count(1)).unwrap();
        let mut rng = Rng::new(123);
        let draws = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[draw_plan(&dist, &policy, &mut rng).unwrap().indices[0]] += 1;
        }
        for (c, p) in counts.iter().zip(weights) {
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - draws as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn without_replacement_never_repeats() {
        let root = Rng::new(7);
        for t in 0..10_000u64 {
            let mut rng = root.derive(t);
            let n = 2 + (t as usize % 9);
            let weights: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
            let dist = Distribution::from_weights(&weights).unwrap();
            let k = 1 + rng.below(n);
            let policy = Policy::new(Selection::Nps, false, true, SampleSize::Count(k)).unwrap();
            let plan = draw_plan(&dist, &policy, &mut rng).unwrap();
            let mask = plan.mask();
            assert_eq!(mask.iter().filter(|m| **m).count(), k);
        }
    }

    proptest! {
        #[test]
        fn distributions_are_normalized(weights in proptest::collection::vec(0.0f64..1e3, 1..40)) {
            let d = Distribution::from_weights(&weights).unwrap();
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
        }

        #[test]
        fn topk_is_scale_invariant(
            scores in proptest::collection::vec(0.0f64..100.0, 1..30),
            c in 1e-3f64..1e3,
            frac in 0.0f64..1.0,
        ) {
            let k = 1 + ((scores.len() - 1) as f64 * frac) as usize;
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let a = topk_plan(&scores, k).unwrap();
            let b = topk_plan(&scaled, k).unwrap();
            prop_assert_eq!(a.indices, b.indices);
        }
    }
}
