//! Minimal dense least squares via Householder QR. Sized for tall, thin
//! design matrices (tens of rows, a handful of columns); no pivoting.

use super::StatsError;

/// Relative tolerance on the R diagonal below which the design matrix
/// is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

pub struct LeastSquares {
    /// Solution of min ||y - X b||, one entry per design column.
    pub coefficients: Vec<f64>,
    /// Diagonal of (X'X)^{-1}, for coefficient standard errors.
    pub xtx_inv_diag: Vec<f64>,
    /// y - X b, in row order.
    pub residuals: Vec<f64>,
}

/// Solves the least-squares problem for a row-major `rows x cols` matrix.
/// Requires rows >= cols; fails if any R diagonal collapses relative to
/// the largest one (collinear or constant columns).
pub fn least_squares(
    design: &[f64],
    rows: usize,
    cols: usize,
    y: &[f64],
) -> Result<LeastSquares, StatsError> {
    assert_eq!(design.len(), rows * cols, "design matrix shape mismatch");
    assert_eq!(y.len(), rows, "target length mismatch");
    assert!(rows >= cols, "least squares needs at least as many rows as columns");

    let mut a = design.to_vec();
    let mut qty = y.to_vec();
    let at = |a: &[f64], i: usize, j: usize| a[i * cols + j];

    // Householder transforms, applied column by column to A and y.
    let mut v = vec![0.0; rows];
    for k in 0..cols {
        let mut norm = 0.0;
        for i in k..rows {
            norm += at(&a, i, k) * at(&a, i, k);
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return Err(StatsError::RankDeficient);
        }

        let akk = at(&a, k, k);
        let alpha = if akk > 0.0 { -norm } else { norm };
        v[k] = akk - alpha;
        for i in (k + 1)..rows {
            v[i] = at(&a, i, k);
        }
        let vtv: f64 = (k..rows).map(|i| v[i] * v[i]).sum();
        if vtv == 0.0 {
            return Err(StatsError::RankDeficient);
        }

        for j in k..cols {
            let dot: f64 = (k..rows).map(|i| v[i] * at(&a, i, j)).sum();
            let scale = 2.0 * dot / vtv;
            for i in k..rows {
                a[i * cols + j] -= scale * v[i];
            }
        }
        let dot: f64 = (k..rows).map(|i| v[i] * qty[i]).sum();
        let scale = 2.0 * dot / vtv;
        for i in k..rows {
            qty[i] -= scale * v[i];
        }
    }

    let max_diag = (0..cols).map(|k| at(&a, k, k).abs()).fold(0.0, f64::max);
    for k in 0..cols {
        if at(&a, k, k).abs() <= RANK_TOL * max_diag {
            return Err(StatsError::RankDeficient);
        }
    }

    // back-substitution: R b = (Q'y)[..cols]
    let mut coefficients = vec![0.0; cols];
    for k in (0..cols).rev() {
        let mut acc = qty[k];
        for j in (k + 1)..cols {
            acc -= at(&a, k, j) * coefficients[j];
        }
        coefficients[k] = acc / at(&a, k, k);
    }

    // R^{-1} by columns, then diag((X'X)^{-1}) = rows of R^{-1} dotted
    // with themselves, since (X'X)^{-1} = R^{-1} R^{-T}.
    let mut rinv = vec![0.0; cols * cols];
    for j in 0..cols {
        rinv[j * cols + j] = 1.0 / at(&a, j, j);
        for i in (0..j).rev() {
            let mut acc = 0.0;
            for k in (i + 1)..=j {
                acc += at(&a, i, k) * rinv[k * cols + j];
            }
            rinv[i * cols + j] = -acc / at(&a, i, i);
        }
    }
    let xtx_inv_diag: Vec<f64> = (0..cols)
        .map(|i| (i..cols).map(|k| rinv[i * cols + k] * rinv[i * cols + k]).sum())
        .collect();

    let residuals: Vec<f64> = (0..rows)
        .map(|i| {
            let fitted: f64 =
                (0..cols).map(|j| design[i * cols + j] * coefficients[j]).sum();
            y[i] - fitted
        })
        .collect();

    Ok(LeastSquares { coefficients, xtx_inv_diag, residuals })
}
