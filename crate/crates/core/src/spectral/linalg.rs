use ndarray::Array2;
use thiserror::Error;

/// Condition numbers above this make a grid unusable for analysis.
pub const COND_LIMIT: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("grid ill-conditioned for analysis: condition number {0:.3e}")]
    IllConditionedGrid(f64),
    #[error("analysis needs at least {need} samples, grid has {got}")]
    TooFewSamples { need: usize, got: usize },
}

/// Moore-Penrose pseudo-inverse of a tall matrix (rows >= cols) with a
/// condition-number guard over the full column space.
///
/// Singular values feed the guard only; the inverse itself comes from a
/// Householder QR solve. The iterative SVD can leave a factorization
/// residual near 1e-10 on grids with clustered spectra, which is too loose
/// for exact-recovery round trips.
pub fn pinv_guarded(m: &Array2<f64>) -> Result<(Array2<f64>, f64), SpectralError> {
    let (rows, cols) = m.dim();
    if rows < cols {
        return Err(SpectralError::TooFewSamples { need: cols, got: rows });
    }
    let na = nalgebra::DMatrix::from_row_iterator(rows, cols, m.iter().copied());
    let sv = na.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin <= 0.0 { f64::INFINITY } else { smax / smin };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(SpectralError::IllConditionedGrid(cond));
    }
    let qr = na.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = Array2::zeros((cols, rows));
    for j in 0..rows {
        for i in (0..cols).rev() {
            let mut acc = q[(j, i)];
            for k in (i + 1)..cols {
                acc -= r[(i, k)] * out[[k, j]];
            }
            out[[i, j]] = acc / r[(i, i)];
        }
    }
    Ok((out, cond))
}
