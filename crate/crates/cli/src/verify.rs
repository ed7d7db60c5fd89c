//! Exact-enumeration checks of the sampled matrix product and convolution.

use log::info;

use crs_core::approx::{conv_expected_error, conv_variance_element, enumerate_conv, enumerate_matmul};
use crs_core::data::{write_report, ReportRow};
use crs_core::sampling::{conv_nps_distribution, conv_optimal_distribution, nps_distribution};
use crs_core::tensor::{column_row_norms, conv2d_exact, matmul_exact};
use crs_core::{Distribution, Matrix, PaddingMode, Rng, Tensor4};

use crate::args::VerifyArgs;
use crate::{report_format, CliResult};

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_rel_residual(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / max_abs(b).max(f64::MIN_POSITIVE)
}

/// Unbiasedness of the scaled with-replacement NPS product on a random
/// `4×3 · 3×2` pair with `k = 2`: largest deviation of the enumerated mean
/// from the exact product, relative to its largest entry.
pub fn matmul_unbiasedness(seed: u64) -> CliResult<f64> {
    let mut rng = Rng::new(seed);
    let a = Matrix::from_fn(4, 3, |_, _| rng.normal(0.0, 1.0));
    let b = Matrix::from_fn(3, 2, |_, _| rng.normal(0.0, 1.0));
    let (cols, rows) = column_row_norms(&a, &b)?;
    let dist = nps_distribution(&cols, &rows)?;
    let moments = enumerate_matmul(&a, &b, &dist, 2)?;
    Ok(max_rel_residual(&moments.mean, matmul_exact(&a, &b)?.data()))
}

/// `B=1`, `4×4×3` input, `2×2×3×2` kernel, standard normal entries.
pub fn conv_instance(seed: u64) -> (Tensor4, Tensor4) {
    let mut rng = Rng::new(seed);
    let input = Tensor4::from_fn([1, 4, 4, 3], |_| rng.normal(0.0, 1.0));
    let kernel = Tensor4::from_fn([2, 2, 3, 2], |_| rng.normal(0.0, 1.0));
    (input, kernel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvMoments {
    pub outcomes: usize,
    /// Enumerated mean vs exact convolution.
    pub unbiasedness: f64,
    /// Closed-form per-element variance vs enumerated variance.
    pub variance: f64,
    /// Sum of enumerated element variances vs the closed-form expected error.
    pub expected_error: f64,
    /// Enumerated expected squared error vs the closed form.
    pub enumerated_error: f64,
}

/// Moment checks of the scaled with-replacement NPS channel estimator.
pub fn conv_moments(input: &Tensor4, kernel: &Tensor4, k: usize, pad: PaddingMode) -> CliResult<ConvMoments> {
    let dist = conv_nps_distribution(input, kernel)?;
    let exact = conv2d_exact(input, kernel, pad)?;
    let m = enumerate_conv(input, kernel, &dist, k, pad)?;
    let [b, oh, ow, oc] = exact.dims();
    let mut closed = Vec::with_capacity(exact.len());
    for n in 0..b {
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..oc {
                    closed.push(conv_variance_element(input, kernel, &dist, k, pad, [n, y, x, c])?);
                }
            }
        }
    }
    let expected = conv_expected_error(input, kernel, &dist, k, pad)?;
    let summed: f64 = m.variance.iter().sum();
    Ok(ConvMoments {
        outcomes: m.outcomes,
        unbiasedness: max_rel_residual(&m.mean, exact.data()),
        variance: max_rel_residual(&closed, &m.variance),
        expected_error: (summed - expected).abs() / expected.abs().max(f64::MIN_POSITIVE),
        enumerated_error: (m.expected_sq_error - expected).abs() / expected.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimality {
    pub optimal_error: f64,
    pub uniform_error: f64,
    pub nps_error: f64,
    /// Smallest `(E(p) − E(p*)) / E(p*)` over the perturbed distributions.
    pub min_margin: f64,
    pub beaten: usize,
    pub perturbations: usize,
}

/// Mixes `p*` with a uniformly random point of the simplex at a random
/// weight in `[0.05, 0.5)`.
fn perturb(p: &[f64], rng: &mut Rng) -> crs_core::Result<Distribution> {
    let raw: Vec<f64> = p.iter().map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let t = rng.uniform_range(0.05, 0.5);
    Distribution::from_weights(
        &p.iter()
            .zip(&raw)
            .map(|(a, r)| (1.0 - t) * a + t * r / total)
            .collect::<Vec<_>>(),
    )
}

pub fn conv_optimality(
    input: &Tensor4,
    kernel: &Tensor4,
    k: usize,
    pad: PaddingMode,
    perturbations: usize,
    seed: u64,
) -> CliResult<Optimality> {
    let optimal = conv_optimal_distribution(input, kernel, pad)?;
    let e = |d: &Distribution| conv_expected_error(input, kernel, d, k, pad);
    let optimal_error = e(&optimal)?;
    let uniform_error = e(&Distribution::uniform(optimal.len()))?;
    let nps_error = e(&conv_nps_distribution(input, kernel)?)?;
    let mut rng = Rng::new(seed);
    let mut min_margin = f64::INFINITY;
    let mut beaten = 0;
    for _ in 0..perturbations {
        let d = perturb(optimal.probs(), &mut rng)?;
        let margin = (e(&d)? - optimal_error) / optimal_error;
        if margin > 0.0 {
            beaten += 1;
        }
        min_margin = min_margin.min(margin);
    }
    Ok(Optimality {
        optimal_error,
        uniform_error,
        nps_error,
        min_margin,
        beaten,
        perturbations,
    })
}

#[allow(clippy::too_many_arguments)]
fn row(
    experiment: &str,
    policy: &str,
    k: usize,
    ic: usize,
    trials: usize,
    metric: &str,
    value: f64,
    seed: u64,
) -> ReportRow {
    ReportRow {
        experiment: experiment.into(),
        policy: policy.into(),
        replacement: true,
        scaled: true,
        ratio: k as f64 / ic as f64,
        k: Some(k),
        trials: trials.max(1),
        metric_name: metric.into(),
        mean: value,
        std: 0.0,
        compute_reduction: None,
        seed,
    }
}

pub fn verify_rows(seed: u64, perturbations: usize) -> CliResult<Vec<ReportRow>> {
    let mut rows = vec![row(
        "verify-matmul",
        "nps-rep-scaled",
        2,
        3,
        9,
        "unbiasedness_residual",
        matmul_unbiasedness(seed)?,
        seed,
    )];
    let (input, kernel) = conv_instance(seed);
    for pad in [PaddingMode::Valid, PaddingMode::Same] {
        let exp = format!("verify-conv/{}", pad.as_str());
        for k in [1, 2] {
            let m = conv_moments(&input, &kernel, k, pad)?;
            for (metric, v) in [
                ("unbiasedness_residual", m.unbiasedness),
                ("variance_residual", m.variance),
                ("expected_error_residual", m.expected_error),
                ("enumerated_error_residual", m.enumerated_error),
            ] {
                rows.push(row(&exp, "nps-rep-scaled", k, 3, m.outcomes, metric, v, seed));
            }
        }
        let o = conv_optimality(&input, &kernel, 1, pad, perturbations, seed)?;
        for (policy, metric, v) in [
            ("optimal", "expected_error", o.optimal_error),
            ("nps-rep-scaled", "expected_error", o.nps_error),
            ("uniform-rep-scaled", "expected_error", o.uniform_error),
            ("optimal", "min_perturbation_margin", o.min_margin),
            ("optimal", "perturbations_beaten", o.beaten as f64),
        ] {
            rows.push(row(&exp, policy, 1, 3, o.perturbations, metric, v, seed));
        }
    }
    Ok(rows)
}

pub fn cmd_verify_conv(a: &VerifyArgs) -> CliResult<()> {
    let rows = verify_rows(a.seed, a.perturbations)?;
    write_report(&rows, &a.out, report_format(a.format, &a.out))?;
    info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}
