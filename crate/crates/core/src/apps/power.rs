//! Power iteration on a square matrix, one executor matvec per step.

use crate::apps::Executor;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, DenseMatrix};

/// Runs power iteration from the normalized all-ones vector. Returns the
/// eigenvalue estimate, the final unit iterate, and the number of
/// iterations. `A` must be square; stops when the relative eigenvalue
/// change drops below `tol`, seeded by the Rayleigh quotient at the start
/// vector.
pub fn power_iteration(
    a: &DenseMatrix,
    max_iters: usize,
    tol: f64,
    exec: &mut Executor,
) -> Result<(f64, Vec<f64>, usize)> {
    if a.rows() != a.cols() {
        return Err(Error::dims(format!(
            "power iteration needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be positive"));
    }
    let n = a.rows();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = exec.matvec(a, &v)?;
    let mut lambda_prev = dot(&v, &w);
    let mut lambda = lambda_prev;
    for k in 1..=max_iters {
        let norm = norm2(&w);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(
                "power iterate collapsed to zero".into(),
            ));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        w = exec.matvec(a, &v)?;
        lambda = dot(&v, &w);
        if (lambda - lambda_prev).abs() <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok((lambda, v, k));
        }
        lambda_prev = lambda;
    }
    Ok((lambda, v, max_iters))
}
