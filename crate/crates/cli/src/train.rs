//! MNIST training runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use crs_core::data::{data_dir, load_mnist_splits, write_report, ReportRow, Splits, DATA_DIR_ENV, TRAIN_IMAGES};
use crs_core::nn::presets::{cnn_layers, mlp_layers, mnist_config};
use crs_core::nn::{train, BackwardSampling, Budget, CurvePoint, TrainConfig, TrainData, TrainOutcome};
use crs_core::{Backend, Policy, SampleSize, Selection};

use crate::args::{BackendArg, BackpropArg, ModelArg, SelectionArg, TrainArgs};
use crate::{report_format, usage, CliError, CliResult};

pub const MLP_EPOCHS: usize = 20;
pub const CNN_ITERATIONS: usize = 2000;
pub const CNN_FULL_ITERATIONS: usize = 20_000;

/// A validated training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: ModelArg,
    pub forward: Option<Policy>,
    pub backward: Option<BackwardSampling>,
    pub config: TrainConfig,
    pub train_limit: Option<usize>,
}

impl TrainRun {
    pub fn experiment(&self) -> String {
        let base = match self.model {
            ModelArg::Mlp => "train-mlp",
            ModelArg::Cnn => "train-cnn",
        };
        match self.backward {
            None => base.to_string(),
            Some(BackwardSampling::Crs(p)) => format!("{base}/bwd-crs-{}", ratio_text(p)),
            Some(BackwardSampling::MeProp(p)) => format!("{base}/bwd-meprop-{}", ratio_text(p)),
        }
    }

    pub fn policy_name(&self) -> String {
        self.forward.map_or_else(|| "exact".to_string(), |p| p.descriptor())
    }

    pub fn forward_ratio(&self) -> f64 {
        match self.forward.map(|p| p.size) {
            Some(SampleSize::Ratio(r)) => r,
            _ => 1.0,
        }
    }
}

fn ratio_text(p: Policy) -> String {
    match p.size {
        SampleSize::Ratio(r) => format!("{r}"),
        SampleSize::Count(k) => format!("k{k}"),
    }
}

fn check_ratio(name: &str, r: f64) -> CliResult<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(usage(format!("{name} must be in (0, 1], got {r}")))
    }
}

pub fn run_from_args(a: &TrainArgs, fixed: Option<ModelArg>) -> CliResult<TrainRun> {
    let model = match (fixed, a.model) {
        (Some(f), Some(m)) if f != m => return Err(usage(format!("--model {m:?} contradicts the subcommand"))),
        (Some(f), _) => f,
        (None, Some(m)) => m,
        (None, None) => return Err(usage("--model is required")),
    };
    let forward = match a.policy {
        SelectionArg::None => {
            if a.ratio.is_some() {
                return Err(usage("--ratio needs --policy"));
            }
            None
        }
        sel => {
            let ratio = a.ratio.ok_or_else(|| usage("--policy needs --ratio"))?;
            check_ratio("--ratio", ratio)?;
            let selection = match sel {
                SelectionArg::Uniform => Selection::Uniform,
                SelectionArg::Nps => Selection::Nps,
                _ => Selection::TopK,
            };
            Some(Policy::new(
                selection,
                a.replacement,
                a.scaled,
                SampleSize::Ratio(ratio),
            )?)
        }
    };
    let mode = match (a.backprop, a.backward_ratio) {
        (Some(m), _) => m,
        (None, Some(_)) => BackpropArg::Crs,
        (None, None) => BackpropArg::None,
    };
    let backward = match mode {
        BackpropArg::None => {
            if a.backward_ratio.is_some() {
                return Err(usage("--backward-ratio conflicts with --backprop none"));
            }
            None
        }
        m => {
            let r = a
                .backward_ratio
                .ok_or_else(|| usage("--backprop needs --backward-ratio"))?;
            check_ratio("--backward-ratio", r)?;
            if a.backward_min_k == 0 {
                return Err(usage("--backward-min-k must be positive"));
            }
            let p = Policy::topk(r)?.with_min_k(a.backward_min_k)?;
            Some(if m == BackpropArg::Crs {
                BackwardSampling::Crs(p)
            } else {
                BackwardSampling::MeProp(p)
            })
        }
    };
    if matches!(backward, Some(BackwardSampling::MeProp(_))) && forward.is_some() {
        return Err(usage("--backprop meprop keeps the forward pass exact; drop --policy"));
    }
    if a.full && model != ModelArg::Cnn {
        return Err(usage("--full applies to the CNN only"));
    }
    let budget = match (a.epochs, a.iters) {
        (Some(0), _) | (_, Some(0)) => return Err(usage("--epochs and --iters must be positive")),
        (Some(e), _) => Budget::Epochs(e),
        (_, Some(n)) => Budget::Iterations(n),
        (None, None) => match model {
            ModelArg::Mlp => Budget::Epochs(MLP_EPOCHS),
            ModelArg::Cnn if a.full => Budget::Iterations(CNN_FULL_ITERATIONS),
            ModelArg::Cnn => Budget::Iterations(CNN_ITERATIONS),
        },
    };
    let layers = match model {
        ModelArg::Mlp => mlp_layers(forward, backward),
        ModelArg::Cnn => cnn_layers(forward, backward),
    };
    let mut config = mnist_config(layers, budget, a.seed);
    config.backend = match a.backend {
        BackendArg::Fast => Backend::Fast,
        BackendArg::Reference => Backend::Reference,
    };
    if let Some(e) = a.eval_every {
        if e == 0 {
            return Err(usage("--eval-every must be positive"));
        }
        config.eval_every = Some(e);
    } else if model == ModelArg::Cnn {
        config.eval_every = Some(500);
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    if a.train_limit == Some(0) {
        return Err(usage("--train-limit must be positive"));
    }
    Ok(TrainRun {
        model,
        forward,
        backward,
        config,
        train_limit: a.train_limit,
    })
}

/// Loads MNIST, mapping missing or malformed files to a data error that
/// names the directory.
pub fn load_data(dir: &Path) -> CliResult<Splits> {
    load_mnist_splits(dir).map_err(|e| match e {
        crs_core::Error::Io { .. } | crs_core::Error::Parse { .. } => CliError::Data(format!(
            "{e}\nhint: put the four uncompressed MNIST IDX files ({TRAIN_IMAGES}, ...) in {} or point {DATA_DIR_ENV} / --data-dir at them",
            dir.display()
        )),
        other => CliError::Core(other),
    })
}

pub fn execute(run: &TrainRun, splits: &Splits) -> CliResult<TrainOutcome> {
    let limited;
    let train_set = match run.train_limit {
        Some(n) if n < splits.train.len() => {
            limited = splits.train.slice(0, n);
            &limited
        }
        _ => &splits.train,
    };
    let data = TrainData {
        train: train_set,
        val: Some(&splits.val),
        test: Some(&splits.test),
    };
    Ok(train(&run.config, data)?)
}

pub fn outcome_rows(run: &TrainRun, out: &TrainOutcome) -> CliResult<Vec<ReportRow>> {
    let reduction = out.ledger.compute_reduction()?;
    let best_val = out
        .curve
        .iter()
        .filter_map(|p| p.val_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let metrics = [
        ("test_accuracy_selected", out.selected_test_accuracy()),
        ("test_accuracy_final", out.final_test_accuracy()),
        ("val_accuracy_best", best_val.is_finite().then_some(best_val)),
        ("train_loss_final", out.curve.last().map(|p| p.train_loss)),
        ("steps", Some(out.steps as f64)),
        ("macs_exact", Some(out.ledger.total_exact() as f64)),
        ("macs_actual", Some(out.ledger.total_actual() as f64)),
    ];
    Ok(metrics
        .into_iter()
        .filter_map(|(name, v)| {
            v.map(|mean| ReportRow {
                experiment: run.experiment(),
                policy: run.policy_name(),
                replacement: run.forward.is_some_and(|p| p.replacement),
                scaled: run.forward.is_some_and(|p| p.scaled),
                ratio: run.forward_ratio(),
                k: None,
                trials: 1,
                metric_name: name.into(),
                mean,
                std: 0.0,
                compute_reduction: Some(reduction),
                seed: run.config.seed,
            })
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// CSV with columns `step, epoch, train_loss, val_accuracy, test_accuracy`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> CliResult<()> {
    let mut text = String::from("step,epoch,train_loss,val_accuracy,test_accuracy\n");
    for p in curve {
        let _ = writeln!(
            text,
            "{},{:.16e},{:.16e},{},{}",
            p.step,
            p.epoch,
            p.train_loss,
            opt(p.val_accuracy),
            opt(p.test_accuracy)
        );
    }
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(crs_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn curve_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.curve.csv"))
}

pub fn cmd_train(a: &TrainArgs, fixed: Option<ModelArg>) -> CliResult<()> {
    let run = run_from_args(a, fixed)?;
    let dir = a.data_dir.clone().unwrap_or_else(data_dir);
    let splits = load_data(&dir)?;
    info!(
        "{} {} ratio {} on {} training examples",
        run.experiment(),
        run.policy_name(),
        run.forward_ratio(),
        run.train_limit
            .map_or(splits.train.len(), |n| n.min(splits.train.len()))
    );
    let outcome = execute(&run, &splits)?;
    let rows = outcome_rows(&run, &outcome)?;
    write_report(&rows, &a.out, report_format(a.format, &a.out))?;
    let curve = a.curve.clone().unwrap_or_else(|| curve_path(&a.out));
    write_curve(&curve, &outcome.curve)?;
    info!(
        "selected test accuracy {:?}, compute reduction {:.4}; wrote {} and {}",
        outcome.selected_test_accuracy(),
        outcome.ledger.compute_reduction()?,
        a.out.display(),
        curve.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Cli;
    use clap::Parser;

    fn parse(args: &[&str]) -> CliResult<TrainRun> {
        let cli = Cli::try_parse_from(args).map_err(|e| usage(e.to_string()))?;
        match cli.command {
            crate::Command::Train(a) => run_from_args(&a, None),
            crate::Command::TrainMlp(a) => run_from_args(&a, Some(ModelArg::Mlp)),
            crate::Command::TrainCnn(a) => run_from_args(&a, Some(ModelArg::Cnn)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults() {
        let mlp = parse(&["crs", "train-mlp"]).unwrap();
        assert_eq!(mlp.config.budget, Budget::Epochs(20));
        assert_eq!(mlp.policy_name(), "exact");
        let cnn = parse(&["crs", "train", "--model", "cnn"]).unwrap();
        assert_eq!(cnn.config.budget, Budget::Iterations(2000));
        let full = parse(&["crs", "train-cnn", "--full"]).unwrap();
        assert_eq!(full.config.budget, Budget::Iterations(20_000));
    }

    #[test]
    fn sampled_run() {
        let r = parse(&[
            "crs",
            "train-mlp",
            "--policy",
            "topk",
            "--ratio",
            "0.4",
            "--backward-ratio",
            "0.05",
        ])
        .unwrap();
        assert_eq!(r.experiment(), "train-mlp/bwd-crs-0.05");
        assert_eq!(r.policy_name(), "topk");
        match r.backward {
            Some(BackwardSampling::Crs(p)) => assert_eq!(p.min_k, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn usage_errors() {
        for args in [
            &["crs", "train"][..],
            &["crs", "train-mlp", "--policy", "topk"],
            &["crs", "train-mlp", "--ratio", "0.3"],
            &["crs", "train-mlp", "--policy", "nps", "--ratio", "1.5"],
            &["crs", "train-mlp", "--backprop", "crs"],
            &["crs", "train-mlp", "--full"],
            &["crs", "train-mlp", "--model", "cnn"],
            &[
                "crs",
                "train-mlp",
                "--policy",
                "topk",
                "--ratio",
                "0.4",
                "--backprop",
                "meprop",
                "--backward-ratio",
                "0.1",
            ],
            &["crs", "train-mlp", "--epochs", "0"],
            &["crs", "train-mlp", "--epochs", "1", "--iters", "5"],
        ] {
            assert_eq!(parse(args).unwrap_err().exit_code(), 2, "{args:?}");
        }
    }

    #[test]
    fn missing_data_is_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_data(dir.path()).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn curve_next_to_report() {
        assert_eq!(curve_path(Path::new("out/run.csv")), PathBuf::from("out/run.curve.csv"));
    }
}
