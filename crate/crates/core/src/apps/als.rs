//! Alternating least squares for low-rank rating prediction. The two large
//! products per iteration (`R W^T` and `R^T H`) run on the executor; the
//! f x f normal systems are solved locally.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::apps::Executor;
use crate::error::{Error, Result};
use crate::matrix::{matmul_reference, DenseMatrix};

// ----------
// State
// ----------

/// Factors and hyperparameters of one ALS run: `R ~ H W` with `H` u x f and
/// `W` f x i.
pub struct AlsState {
    pub ratings: DenseMatrix,
    pub h: DenseMatrix,
    pub w: DenseMatrix,
    pub lambda: f64,
    pub f: usize,
    pub eps: f64,
}

impl AlsState {
    /// `||R - HW||_F^2 + lambda (||H||_F^2 + ||W||_F^2)`.
    pub fn loss(&self) -> Result<f64> {
        let approx = matmul_reference(&self.h, &self.w.transpose())?;
        let fit = self.ratings.sub(&approx)?.frobenius_norm().powi(2);
        let reg = self.h.frobenius_norm().powi(2) + self.w.frobenius_norm().powi(2);
        Ok(fit + self.lambda * reg)
    }
}

// ----------
// Driver
// ----------

/// Runs ALS from Uniform[0, 1/f] factors. Each full iteration updates `H`
/// then `W` by exact ridge minimization and appends the loss afterwards;
/// stops when the squared fit error drops to `eps` or after `max_iters`.
pub fn als(
    r: &DenseMatrix,
    f: usize,
    lambda: f64,
    eps: f64,
    max_iters: usize,
    seed: u64,
    exec: &mut Executor,
) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>)> {
    if f == 0 {
        return Err(Error::invalid("factor rank f must be at least 1"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = 1.0 / f as f64;
    let mut h = DenseMatrix::random_uniform(r.rows(), f, 0.0, hi, &mut rng);
    let mut w = DenseMatrix::random_uniform(f, r.cols(), 0.0, hi, &mut rng);
    let r_t = r.transpose();

    let mut trace = Vec::new();
    for _ in 0..max_iters {
        // H update: H = R W^T (W W^T + lambda I)^-1. The f x f Gram matrix
        // and its inverse stay local; the big product goes to the executor.
        let rw = exec.matmul(r, &w)?;
        let gram_w = ridge_gram(&matmul_reference(&w, &w)?, lambda)?;
        h = matmul_reference(&rw, &invert_spd(&gram_w)?)?;

        // W update via its transpose: W^T = R^T H (H^T H + lambda I)^-1.
        let h_t = h.transpose();
        let rth = exec.matmul(&r_t, &h_t)?;
        let gram_h = ridge_gram(&matmul_reference(&h_t, &h_t)?, lambda)?;
        w = matmul_reference(&rth, &invert_spd(&gram_h)?)?.transpose();

        let state = AlsState {
            ratings: r.clone(),
            h: h.clone(),
            w: w.clone(),
            lambda,
            f,
            eps,
        };
        let loss = state.loss()?;
        trace.push(loss);
        let fit = r
            .sub(&matmul_reference(&h, &w.transpose())?)?
            .frobenius_norm()
            .powi(2);
        if fit <= eps {
            break;
        }
    }
    Ok((h, w, trace))
}

fn ridge_gram(gram: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    let mut g = gram.clone();
    for i in 0..g.rows() {
        g.set(i, i, g.get(i, i) + lambda);
    }
    Ok(g)
}

fn invert_spd(g: &DenseMatrix) -> Result<DenseMatrix> {
    match g.to_na().try_inverse() {
        Some(inv) => Ok(DenseMatrix::from_na(&inv)),
        None => Err(Error::Degenerate(
            "f x f normal system is singular despite the ridge".into(),
        )),
    }
}

// ----------
// Synthetic ratings
// ----------

/// A u x i ratings matrix: Uniform{1..5} base per entry plus N(0, 0.2)
/// noise, rounded to the nearest integer. Deterministic per seed.
pub fn synth_ratings(u: usize, i: usize, seed: u64) -> DenseMatrix {
    assert!(u > 0 && i > 0, "empty ratings matrix");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.2).expect("valid std");
    let data = (0..u * i)
        .map(|_| {
            let base = rng.random_range(1..=5) as f64;
            (base + noise.sample(&mut rng)).round()
        })
        .collect();
    DenseMatrix::new(u, i, data).expect("positive dims")
}
