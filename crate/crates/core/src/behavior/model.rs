use nalgebra::{DMatrix, DVector};

use super::hankel::{build_hankel, numerical_rank, RANK_TOLERANCE};
use super::Trajectory;
use crate::error::{ensure_finite, Error, Result};

/// Default Tikhonov parameter for noisy records.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Internal model built from one input/output record.
///
/// With `N` samples and order `L`, `H_L(u)` and `H_L(y)` are built from
/// samples `0..N-1` and the shifted output matrix from samples `1..N`, so all
/// three have `N - L` columns. A window `(u_bar, y_bar)` of length `L` is
/// explained by coefficients `alpha` solving
///
/// ```text
/// [H_L(u); H_L(y)] alpha = [u_bar; y_bar]
/// ```
///
/// in the minimum-norm (or ridge) least-squares sense, and the next output is
/// the last entry of `H'_L(y) alpha`.
#[derive(Debug, Clone)]
pub struct HankelModel {
    order: usize,
    ridge: f64,
    hu: DMatrix<f64>,
    hy: DMatrix<f64>,
    hy_shift: DMatrix<f64>,
    /// Maps a stacked window `[u_bar; y_bar]` to `alpha`.
    pinv: DMatrix<f64>,
    /// Last row of `H'_L(y)` composed with `pinv`.
    predictor: DVector<f64>,
}

impl HankelModel {
    /// Builds the model and checks that the input part of the record is
    /// persistently exciting of order `2L + 1`, taking the unknown state
    /// dimension to be at most `L`.
    pub fn new(traj: &Trajectory, order: usize, ridge: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("model order must be positive".into()));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidArgument(format!("ridge must be a nonnegative number, got {ridge}")));
        }
        let n = traj.len();
        let required = 2 * order + 1;
        // A length-K sequence can only be exciting of order k when K >= 2k - 1.
        if n < 2 * required + 1 {
            return Err(Error::InvalidArgument(format!(
                "{n} samples cannot be exciting of order {required}; need at least {}",
                2 * required + 1
            )));
        }
        let (u, y) = (traj.inputs(), traj.outputs());
        let rank = numerical_rank(&build_hankel(&u[..n - 1], required)?);
        if rank < required {
            return Err(Error::NotPersistentlyExciting { rank, required });
        }
        let hu = build_hankel(&u[..n - 1], order)?;
        let hy = build_hankel(&y[..n - 1], order)?;
        let hy_shift = build_hankel(&y[1..], order)?;

        let cols = n - order;
        let mut stacked = DMatrix::zeros(2 * order, cols);
        stacked.rows_mut(0, order).copy_from(&hu);
        stacked.rows_mut(order, order).copy_from(&hy);
        let pinv = regularized_pinv(stacked, ridge)?;
        let last = hy_shift.row(order - 1).transpose();
        let predictor = pinv.transpose() * last;
        Ok(Self {
            order,
            ridge,
            hu,
            hy,
            hy_shift,
            pinv,
            predictor,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Number of columns, i.e. the length of `alpha`.
    pub fn columns(&self) -> usize {
        self.hu.ncols()
    }

    pub fn hankel_inputs(&self) -> &DMatrix<f64> {
        &self.hu
    }

    pub fn hankel_outputs(&self) -> &DMatrix<f64> {
        &self.hy
    }

    pub fn shifted_outputs(&self) -> &DMatrix<f64> {
        &self.hy_shift
    }

    fn stacked_window(&self, u_bar: &[f64], y_bar: &[f64]) -> Result<DVector<f64>> {
        if u_bar.len() != self.order || y_bar.len() != self.order {
            return Err(Error::shape(
                "hankel window",
                self.order,
                format!("{} inputs, {} outputs", u_bar.len(), y_bar.len()),
            ));
        }
        ensure_finite(u_bar, "window inputs")?;
        ensure_finite(y_bar, "window outputs")?;
        Ok(DVector::from_iterator(
            2 * self.order,
            u_bar.iter().chain(y_bar).copied(),
        ))
    }

    /// Coefficients explaining the window and the 2-norm of the defect.
    pub fn solve_alpha(&self, u_bar: &[f64], y_bar: &[f64]) -> Result<(DVector<f64>, f64)> {
        let b = self.stacked_window(u_bar, y_bar)?;
        let alpha = &self.pinv * &b;
        let fit_u = &self.hu * &alpha;
        let fit_y = &self.hy * &alpha;
        let residual = fit_u
            .iter()
            .chain(fit_y.iter())
            .zip(b.iter())
            .map(|(f, t)| (f - t).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok((alpha, residual))
    }

    /// Last entry of `H'_L(y) alpha` for the window's `alpha`.
    pub fn predict_next_output(&self, u_bar: &[f64], y_bar: &[f64]) -> Result<f64> {
        let (alpha, _) = self.solve_alpha(u_bar, y_bar)?;
        Ok(self.hy_shift.row(self.order - 1).dot(&alpha.transpose()))
    }

    /// Same prediction as [`Self::predict_next_output`] through the
    /// precomputed linear map, `2L` multiplications per call.
    pub fn predict_fast(&self, u_bar: &[f64], y_bar: &[f64]) -> Result<f64> {
        Ok(self.predictor.dot(&self.stacked_window(u_bar, y_bar)?))
    }

    /// Weights `g` with `prediction = g . [u_bar; y_bar]`.
    pub fn predictor_weights(&self) -> &[f64] {
        self.predictor.as_slice()
    }
}

/// `V diag(f(s)) U^T` with `f(s) = s / (s^2 + ridge)`. Without a ridge,
/// singular values below the numerical-rank threshold
/// [`RANK_TOLERANCE`]` * s_max` are dropped, which gives the minimum-norm
/// least-squares solution on the numerical range.
fn regularized_pinv(m: DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::NonFinite("hankel decomposition")),
    };
    let s = svd.singular_values;
    let cutoff = RANK_TOLERANCE * s.max();
    let filtered = s.map(|s| {
        if ridge > 0.0 {
            s / (s * s + ridge)
        } else if s > cutoff {
            1.0 / s
        } else {
            0.0
        }
    });
    let mut pinv = v_t.transpose() * DMatrix::from_diagonal(&filtered) * u.transpose();
    if ridge == 0.0 {
        // The SVD of these rank-deficient matrices loses several digits in
        // the singular vectors (fit residuals up to 5e-5 on exact data).
        // Newton-Schulz steps `X <- 2X - X M X` converge quadratically to
        // the pseudo-inverse from there.
        for _ in 0..REFINEMENT_STEPS {
            let xm = &pinv * &m;
            pinv = &pinv * 2.0 - xm * &pinv;
        }
    }
    ensure_finite(pinv.as_slice(), "hankel pseudo-inverse")?;
    Ok(pinv)
}

const REFINEMENT_STEPS: usize = 2;
