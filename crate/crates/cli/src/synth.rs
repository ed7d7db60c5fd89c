//! Normalized-error sweep over sampling variants on random products.

use log::info;

use crs_core::approx::apply_matmul_plan;
use crs_core::data::{gen_gaussian_matrix, write_report, ReportRow};
use crs_core::sampling::plan_from_scores;
use crs_core::tensor::{column_row_norms, frobenius_norm, Backend, Matrix};
use crs_core::{Policy, Rng, SampleSize, Selection};

use crate::args::{EnsembleArg, PolicyArg, SynthArgs};
use crate::{report_format, usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ensemble {
    /// `A, B ~ N(1,1)`.
    N11,
    /// `A ~ N(0,1)`, `B ~ N(1,1)`.
    N01,
}

impl Ensemble {
    pub fn name(self) -> &'static str {
        match self {
            Ensemble::N11 => "n11",
            Ensemble::N01 => "n01",
        }
    }

    fn a_mean(self) -> f64 {
        match self {
            Ensemble::N11 => 1.0,
            Ensemble::N01 => 0.0,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Ensemble::N11 => 0,
            Ensemble::N01 => 1,
        }
    }
}

/// One sampling variant, independent of sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub selection: Selection,
    pub replacement: bool,
    pub scaled: bool,
}

impl Variant {
    /// The eight random variants followed by top-k.
    pub fn all() -> Vec<Variant> {
        Policy::all_variants(SampleSize::Ratio(1.0))
            .into_iter()
            .map(|p| Variant {
                selection: p.selection,
                replacement: p.replacement,
                scaled: p.scaled,
            })
            .collect()
    }

    pub fn policy(self, ratio: f64) -> crs_core::Result<Policy> {
        Policy::new(self.selection, self.replacement, self.scaled, SampleSize::Ratio(ratio))
    }

    /// Stable id, so a cell's draws do not depend on which other cells run.
    fn id(self) -> u64 {
        Variant::all().iter().position(|v| *v == self).expect("known variant") as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub variants: Vec<Variant>,
    pub ratios: Vec<f64>,
    pub trials: usize,
    pub size: usize,
    pub ensembles: Vec<Ensemble>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn default_ratios() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.variants.is_empty() {
            return Err(usage("no sampling variant matches the filters"));
        }
        if self.ratios.is_empty() {
            return Err(usage("no ratios given"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(usage(format!("--ratio values must be in (0, 1], got {r}")));
        }
        if self.trials == 0 || self.size == 0 {
            return Err(usage("--trials and --size must be positive"));
        }
        Ok(())
    }
}

/// Mean and standard deviation of the normalized error of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCell {
    pub ensemble: Ensemble,
    pub variant: Variant,
    pub ratio: f64,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

impl SynthCell {
    pub fn policy_name(&self) -> String {
        self.variant.policy(self.ratio).expect("validated ratio").descriptor()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn ratio_key(ratio: f64) -> u64 {
    (ratio * 1e6).round() as u64
}

/// Trial `t` draws fresh matrices from a generator seeded with `seed ^ t`;
/// every (variant, ratio) cell samples from its own sub-stream of it.
#[allow(clippy::needless_range_loop)]
pub fn run_synth(cfg: &SynthConfig) -> CliResult<Vec<SynthCell>> {
    cfg.validate()?;
    let n = cfg.size;
    let mut cells = Vec::new();
    for &ensemble in &cfg.ensembles {
        let mut errors = vec![vec![0.0; cfg.trials]; cfg.variants.len() * cfg.ratios.len()];
        for t in 0..cfg.trials {
            let trial = Rng::new(cfg.seed ^ t as u64);
            let mut mrng = trial.derive(ensemble.stream());
            let a = gen_gaussian_matrix(n, n, ensemble.a_mean(), 1.0, &mut mrng)?;
            let b = gen_gaussian_matrix(n, n, 1.0, 1.0, &mut mrng)?;
            let exact = Backend::Fast.matmul(&a, &b)?;
            let denom = frobenius_norm(&a) * frobenius_norm(&b);
            let (cols, rows) = column_row_norms(&a, &b)?;
            let scores: Vec<f64> = cols.iter().zip(&rows).map(|(c, r)| c * r).collect();
            for (vi, variant) in cfg.variants.iter().enumerate() {
                for (ri, &ratio) in cfg.ratios.iter().enumerate() {
                    let policy = variant.policy(ratio)?;
                    let stream = 16 + ((variant.id() << 32) | ratio_key(ratio));
                    let plan = plan_from_scores(&scores, &policy, &mut trial.derive(stream))?;
                    let approx = apply_matmul_plan(Backend::Fast, &a, &b, &plan)?;
                    errors[vi * cfg.ratios.len() + ri][t] = frobenius_distance(&exact, &approx) / denom;
                }
            }
        }
        for (vi, variant) in cfg.variants.iter().enumerate() {
            for (ri, &ratio) in cfg.ratios.iter().enumerate() {
                let (mean, std) = mean_std(&errors[vi * cfg.ratios.len() + ri]);
                cells.push(SynthCell {
                    ensemble,
                    variant: *variant,
                    ratio,
                    k: variant.policy(ratio)?.sample_count(n),
                    mean,
                    std,
                });
            }
        }
        info!("{}: {} trials done", ensemble.name(), cfg.trials);
    }
    Ok(cells)
}

fn frobenius_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Report rows: one per cell, then the `1/√k` bound per ensemble and ratio.
pub fn synth_rows(cfg: &SynthConfig, cells: &[SynthCell]) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = cells
        .iter()
        .map(|c| ReportRow {
            experiment: format!("synth-matmul/{}", c.ensemble.name()),
            policy: c.policy_name(),
            replacement: c.variant.replacement,
            scaled: c.variant.scaled,
            ratio: c.ratio,
            k: Some(c.k),
            trials: cfg.trials,
            metric_name: "normalized_frobenius_error".into(),
            mean: c.mean,
            std: c.std,
            compute_reduction: None,
            seed: cfg.seed,
        })
        .collect();
    for &ensemble in &cfg.ensembles {
        for &ratio in &cfg.ratios {
            let k = ((ratio * cfg.size as f64).round() as usize).clamp(1, cfg.size);
            rows.push(ReportRow {
                experiment: format!("synth-matmul/{}", ensemble.name()),
                policy: "bound".into(),
                replacement: true,
                scaled: true,
                ratio,
                k: Some(k),
                trials: 1,
                metric_name: "inverse_sqrt_k".into(),
                mean: 1.0 / (k as f64).sqrt(),
                std: 0.0,
                compute_reduction: None,
                seed: cfg.seed,
            });
        }
    }
    rows
}

pub fn config_from_args(a: &SynthArgs) -> SynthConfig {
    let variants = Variant::all()
        .into_iter()
        .filter(|v| match a.policy {
            PolicyArg::All => true,
            PolicyArg::Uniform => v.selection == Selection::Uniform,
            PolicyArg::Nps => v.selection == Selection::Nps,
            PolicyArg::Topk => v.selection == Selection::TopK,
        })
        .filter(|v| v.selection == Selection::TopK || a.replacement.is_none_or(|r| r == v.replacement))
        .filter(|v| v.selection == Selection::TopK || a.scaled.is_none_or(|s| s == v.scaled))
        .collect();
    let ensembles = match a.ensemble {
        EnsembleArg::N11 => vec![Ensemble::N11],
        EnsembleArg::N01 => vec![Ensemble::N01],
        EnsembleArg::Both => vec![Ensemble::N11, Ensemble::N01],
    };
    SynthConfig {
        variants,
        ratios: if a.ratios.is_empty() {
            SynthConfig::default_ratios()
        } else {
            a.ratios.clone()
        },
        trials: a.trials,
        size: a.size,
        ensembles,
        seed: a.seed,
    }
}

pub fn cmd_synth_matmul(a: &SynthArgs) -> CliResult<()> {
    let cfg = config_from_args(a);
    let cells = run_synth(&cfg)?;
    let rows = synth_rows(&cfg, &cells);
    write_report(&rows, &a.out, report_format(a.format, &a.out))?;
    info!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(ratios: Vec<f64>) -> SynthConfig {
        SynthConfig {
            variants: Variant::all(),
            ratios,
            trials: 20,
            size: 12,
            ensembles: vec![Ensemble::N11, Ensemble::N01],
            seed: 3,
        }
    }

    #[test]
    fn nine_variants() {
        let all = Variant::all();
        assert_eq!(all.len(), 9);
        assert_eq!(all.last().unwrap().selection, Selection::TopK);
    }

    #[test]
    fn full_ratio_without_replacement_is_exact() {
        let cfg = small(vec![1.0]);
        for c in run_synth(&cfg).unwrap() {
            let exact_expected = !c.variant.replacement && !(c.variant.scaled && c.variant.selection == Selection::Nps);
            if exact_expected {
                assert!(c.mean <= 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn cells_do_not_depend_on_other_cells() {
        let full = run_synth(&small(vec![0.2, 0.5])).unwrap();
        let mut only = small(vec![0.5]);
        only.variants = vec![Variant::all()[3]];
        let one = run_synth(&only).unwrap();
        let matching: Vec<_> = full
            .iter()
            .filter(|c| c.variant == only.variants[0] && c.ratio == 0.5)
            .collect();
        assert_eq!(matching.len(), 2);
        assert_eq!(matching[0], &one[0]);
        assert_eq!(matching[1], &one[1]);
    }

    #[test]
    fn bound_rows_follow_cells() {
        let cfg = small(vec![0.25]);
        let cells = run_synth(&cfg).unwrap();
        let rows = synth_rows(&cfg, &cells);
        assert_eq!(rows.len(), 9 * 2 + 2);
        let bound = rows.last().unwrap();
        assert_eq!(bound.k, Some(3));
        assert!((bound.mean - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn invalid_ratio_is_usage_error() {
        let cfg = small(vec![1.5]);
        assert_eq!(run_synth(&cfg).unwrap_err().exit_code(), 2);
    }
}
