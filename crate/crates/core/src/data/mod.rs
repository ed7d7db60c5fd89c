//! MNIST ingestion, synthetic matrices and experiment reports.

mod dataset;
pub mod idx;
mod report;
mod synth;

pub use dataset::{
    data_dir, load_mnist, load_mnist_splits, Dataset, Splits, DATA_DIR_ENV, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES,
    TRAIN_LABELS, VALIDATION_SIZE,
};
pub use report::{read_report, write_report, ReportFormat, ReportRow, ReportWriter, COLUMNS};
pub use synth::gen_gaussian_matrix;
