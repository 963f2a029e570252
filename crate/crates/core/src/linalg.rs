//! Dense SPD solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const INITIAL_JITTER: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;
const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky.
///
/// If the factorization fails, a diagonal jitter starting at `1e-12` (times
/// the mean diagonal) is added and grown tenfold, at most three times.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for attempt in 0..=JITTER_RETRIES {
        let mut m = a.clone();
        if attempt > 0 {
            jitter = if jitter == 0.0 {
                INITIAL_JITTER
            } else {
                jitter * 10.0
            };
            for i in 0..n {
                m[(i, i)] += jitter * scale;
            }
        }
        if let Some(chol) = m.cholesky() {
            let x = chol.solve(b);
            let residual = (a * &x - b).norm() / b.norm().max(f64::MIN_POSITIVE);
            if residual > RESIDUAL_TOLERANCE && b.norm() > 0.0 {
                return Err(Error::IllConditioned(residual));
            }
            return Ok(x);
        }
    }
    Err(Error::NotPositiveDefinite)
}
