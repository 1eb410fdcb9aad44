//! Small dense helpers shared by the estimation and optimality modules.

use nalgebra::DMatrix;

/// Reciprocal 1-norm condition number below which a matrix is treated as
/// singular.
pub(crate) const SINGULAR_RCOND: f64 = 1e-14;

/// Fits `m ~ a I + b J` (a square matrix) by `b = mean off-diagonal`,
/// `a = mean diagonal - b`, and returns the fit with the largest entrywise
/// residual.
pub(crate) fn fit_identity_plus_ones(m: &DMatrix<f64>) -> (f64, f64, f64) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let diag_mean = (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64;
    let off_mean = if n > 1 {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += m[(i, j)];
                }
            }
        }
        total / (n * (n - 1)) as f64
    } else {
        0.0
    };
    let a = diag_mean - off_mean;
    let b = off_mean;
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let expected = if i == j { a + b } else { b };
            residual = residual.max((m[(i, j)] - expected).abs());
        }
    }
    (a, b, residual)
}

/// Inverse of `a I + b J` of order `n`: `(1/a) (I - b / (a + n b) J)`.
pub(crate) fn identity_plus_ones_inverse(a: f64, b: f64, n: usize) -> DMatrix<f64> {
    let off = -b / (a * (a + n as f64 * b));
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / a + off } else { off })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Dense inverse by LU with partial pivoting. On failure returns the
/// reciprocal condition estimate (0 when a pivot vanished exactly).
pub(crate) fn dense_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let inv = m.clone().lu().try_inverse().ok_or(0.0)?;
    let rcond = 1.0 / (one_norm(m) * one_norm(&inv));
    if !rcond.is_finite() || rcond < SINGULAR_RCOND {
        return Err(if rcond.is_finite() { rcond } else { 0.0 });
    }
    Ok(inv)
}
