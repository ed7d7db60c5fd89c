use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// `m×n` matrix of i.i.d. `N(mean, std²)` entries, filled row by row.
pub fn gen_gaussian_matrix(m: usize, n: usize, mean: f64, std: f64, rng: &mut Rng) -> Result<Matrix> {
    if std < 0.0 || !mean.is_finite() || !std.is_finite() {
        return Err(Error::domain(format!(
            "invalid normal parameters mean={mean} std={std}"
        )));
    }
    Matrix::new(m, n, (0..m * n).map(|_| rng.normal(mean, std)).collect())
}
