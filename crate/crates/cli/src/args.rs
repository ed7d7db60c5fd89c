use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "crs",
    version,
    about = "Approximate tensor operations by column-row sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalized error of every sampling variant on random matrix products.
    SynthMatmul(SynthArgs),
    /// Exact-enumeration checks of the channel-sampled convolution estimator.
    VerifyConv(VerifyArgs),
    /// Train on MNIST with sampled products.
    Train(TrainArgs),
    /// `train --model mlp`.
    TrainMlp(TrainArgs),
    /// `train --model cnn`.
    TrainCnn(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    All,
    Uniform,
    Nps,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    /// A and B with N(1,1) entries.
    N11,
    /// A with N(0,1), B with N(1,1) entries.
    N01,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = PolicyArg::All)]
    pub policy: PolicyArg,
    /// Restrict to one replacement mode; both when omitted.
    #[arg(long, action = ArgAction::Set)]
    pub replacement: Option<bool>,
    /// Restrict to scaled or unscaled variants; both when omitted.
    #[arg(long, action = ArgAction::Set)]
    pub scaled: Option<bool>,
    /// Comma-separated sample ratios; 0.1 to 1.0 in steps of 0.1 by default.
    #[arg(long = "ratio", value_delimiter = ',')]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Matrices are size×size.
    #[arg(long, default_value_t = 100)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = EnsembleArg::N11)]
    pub ensemble: EnsembleArg,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long, default_value = "synth-matmul.csv")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Random distributions compared against the optimal one.
    #[arg(long, default_value_t = 100)]
    pub perturbations: usize,
    #[arg(long, default_value = "verify-conv.csv")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    None,
    Uniform,
    Nps,
    Topk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackpropArg {
    None,
    Crs,
    Meprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Fast,
    Reference,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Forward sampling of every sampled layer.
    #[arg(long, value_enum, default_value_t = SelectionArg::None)]
    pub policy: SelectionArg,
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pub replacement: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pub scaled: bool,
    /// Forward sample ratio; required with a forward policy.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Backward sampling mode; `crs` when only --backward-ratio is given.
    #[arg(long, value_enum)]
    pub backprop: Option<BackpropArg>,
    /// Top-k ratio of each backward product.
    #[arg(long)]
    pub backward_ratio: Option<f64>,
    /// Smallest sample count of a backward product.
    #[arg(long, default_value_t = 10)]
    pub backward_min_k: usize,
    #[arg(long, conflicts_with = "iters")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// CNN only: 20000 iterations instead of 2000.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Use only the first N training examples.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Evaluate every N steps; once per epoch by default.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Directory with the four MNIST IDX files; $APPROX_DATA_DIR or data/mnist by default.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BackendArg::Fast)]
    pub backend: BackendArg,
    #[arg(long, default_value = "train.csv")]
    pub out: PathBuf,
    /// Accuracy curve; `<out stem>.curve.csv` by default.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}
