use std::path::{Path, PathBuf};

use crate::data::idx;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const DATA_DIR_ENV: &str = "APPROX_DATA_DIR";
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const VALIDATION_SIZE: usize = 5000;

/// Images (`N×H×W×C`, values in `[0,1]`) with class labels `0..=9`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor4,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Vec<u8>) -> Result<Self> {
        if images.dims()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.dims()[0],
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::domain(format!("label {l} outside 0..=9")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor4 {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Per-example dimensions `[H, W, C]`.
    pub fn example_dims(&self) -> [usize; 3] {
        let [_, h, w, c] = self.images.dims();
        [h, w, c]
    }

    /// Examples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let [_, h, w, c] = self.images.dims();
        let per = h * w * c;
        let data = self.images.data()[start * per..end * per].to_vec();
        Dataset {
            images: Tensor4::from_parts([end - start, h, w, c], data),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// The listed examples, in order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4, Vec<u8>) {
        let [_, h, w, c] = self.images.dims();
        let per = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor4::from_parts([indices.len(), h, w, c], data), labels)
    }
}

/// Decodes an IDX image file and its label file; pixels are divided by 255.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = idx::decode_images(&read(images_path)?)?;
    let labels = idx::decode_labels(&read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(Error::Parse {
            offset: 4,
            message: format!(
                "{} has {} labels but {} has {} images",
                labels_path.display(),
                labels.len(),
                images_path.display(),
                images.count
            ),
        });
    }
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let tensor = Tensor4::new([images.count, images.rows, images.cols, 1], data)?;
    Dataset::new(tensor, labels)
}

/// Training, validation and test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Directory holding the four MNIST files: `$APPROX_DATA_DIR`, else
/// `data/mnist`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Loads MNIST from `dir`; the first 5000 training images form the
/// validation set.
pub fn load_mnist_splits(dir: &Path) -> Result<Splits> {
    let full = load_mnist(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_mnist(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    if full.len() <= VALIDATION_SIZE {
        return Err(Error::domain(format!(
            "training file holds {} images, need more than {VALIDATION_SIZE}",
            full.len()
        )));
    }
    Ok(Splits {
        val: full.slice(0, VALIDATION_SIZE),
        train: full.slice(VALIDATION_SIZE, full.len()),
        test,
    })
}
