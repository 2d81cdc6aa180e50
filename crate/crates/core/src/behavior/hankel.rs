use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest one do not count
/// towards the numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Hankel matrix of order `order`: `order` rows, `len - order + 1` columns,
/// entry `(i, j) = z[i + j]`.
pub fn build_hankel(z: &[f64], order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Err(Error::InvalidArgument("hankel order must be positive".into()));
    }
    if order > z.len() {
        return Err(Error::InvalidArgument(format!(
            "hankel order {order} exceeds sequence length {}",
            z.len()
        )));
    }
    let cols = z.len() - order + 1;
    Ok(DMatrix::from_fn(order, cols, |i, j| z[i + j]))
}

/// Number of singular values above [`RANK_TOLERANCE`] times the largest.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// True when the order-`order` Hankel matrix of a scalar sequence has full
/// row rank.
pub fn is_persistently_exciting(z: &[f64], order: usize) -> Result<bool> {
    Ok(numerical_rank(&build_hankel(z, order)?) == order)
}
