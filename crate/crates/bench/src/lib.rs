//! Input fixtures shared by the kernel benchmarks.

use crs_core::{Matrix, Rng, Tensor4};

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal(0.0, 1.0)).collect()).expect("finite gaussian entries")
}

pub fn gaussian_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = Rng::new(seed);
    let len = dims.iter().product();
    Tensor4::new(dims, (0..len).map(|_| rng.normal(0.0, 1.0)).collect()).expect("finite gaussian entries")
}
