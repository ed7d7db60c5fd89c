//! Experiment driver: synthetic matrix-product sweeps, exact verification of
//! the channel-sampled convolution estimator, and MNIST training runs.

pub mod args;
pub mod synth;
pub mod train;
pub mod verify;

use std::path::Path;

use crs_core::data::ReportFormat;

pub use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] crs_core::Error),
}

impl CliError {
    /// 2 usage, 3 missing or unreadable data, 4 numeric failure, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(crs_core::Error::Divergence { .. }) => 4,
            CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub(crate) fn report_format(explicit: Option<args::FormatArg>, path: &Path) -> ReportFormat {
    match explicit {
        Some(args::FormatArg::Csv) => ReportFormat::Csv,
        Some(args::FormatArg::Jsonl) => ReportFormat::JsonLines,
        None => ReportFormat::from_path(path),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthMatmul(a) => synth::cmd_synth_matmul(&a),
        Command::VerifyConv(a) => verify::cmd_verify_conv(&a),
        Command::Train(a) => train::cmd_train(&a, None),
        Command::TrainMlp(a) => train::cmd_train(&a, Some(args::ModelArg::Mlp)),
        Command::TrainCnn(a) => train::cmd_train(&a, Some(args::ModelArg::Cnn)),
    }
}
