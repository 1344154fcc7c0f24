//! Tall-skinny SVD: a local eigendecomposition of the small Gram matrix
//! `B = A^T A`, with both large products (`B` itself and `U = A V S^-1`)
//! running on the executor.

use crate::apps::Executor;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Computes `A = U S V^T` for rows >= cols. Returns `U` (rows x cols),
/// the singular values in descending order, and `V` (cols x cols). Columns
/// whose singular value falls below `cols * eps * sigma_max` are zeroed in
/// `U`. Each column of `V` has its largest-magnitude entry positive.
pub fn tall_skinny_svd(
    a: &DenseMatrix,
    exec: &mut Executor,
) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    if a.rows() < a.cols() {
        return Err(Error::dims(format!(
            "tall-skinny SVD needs rows >= cols, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let p = a.cols();
    // B = A^T A through the executor, then symmetrize away roundoff.
    let a_t = a.transpose();
    let b = exec.matmul(&a_t, &a_t)?;
    let b = b.add(&b.transpose())?.scale(0.5);

    let eig = nalgebra::SymmetricEigen::new(b.to_na());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let mut sigma = Vec::with_capacity(p);
    let mut v = DenseMatrix::zeros(p, p);
    for (col, &src) in order.iter().enumerate() {
        sigma.push(eig.eigenvalues[src].max(0.0).sqrt());
        // Sign convention: largest-magnitude entry positive.
        let mut best = 0;
        for r in 1..p {
            if eig.eigenvectors[(r, src)].abs() > eig.eigenvectors[(best, src)].abs() {
                best = r;
            }
        }
        let flip = if eig.eigenvectors[(best, src)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        for r in 0..p {
            v.set(r, col, flip * eig.eigenvectors[(r, src)]);
        }
    }

    let sigma_max = sigma[0];
    if sigma_max == 0.0 {
        return Err(Error::RankZero);
    }
    let tau = p as f64 * f64::EPSILON * sigma_max;

    // U = A (V S^-1); rank-deficient columns become zero columns.
    let mut v_sinv_t = DenseMatrix::zeros(p, p);
    for col in 0..p {
        if sigma[col] > tau {
            for r in 0..p {
                v_sinv_t.set(col, r, v.get(r, col) / sigma[col]);
            }
        }
    }
    let u = exec.matmul(a, &v_sinv_t)?;
    Ok((u, sigma, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::CodeParams;
    use crate::matrix::matmul_reference;
    use crate::sim::SimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.model.p = 0.0;
        cfg
    }

    fn reconstruct(u: &DenseMatrix, sigma: &[f64], v: &DenseMatrix) -> DenseMatrix {
        // A = U diag(sigma) V^T, computed as (U S) * V^T with A*B^T form.
        let mut us = u.clone();
        for i in 0..u.rows() {
            for j in 0..u.cols() {
                us.set(i, j, u.get(i, j) * sigma[j]);
            }
        }
        matmul_reference(&us, v).unwrap()
    }

    // --- known decompositions ---

    #[test]
    fn orthonormal_columns_give_unit_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let raw = DenseMatrix::random_uniform(8, 8, -1.0, 1.0, &mut rng);
        let q = nalgebra::QR::new(raw.to_na()).q();
        let mut a = DenseMatrix::zeros(8, 3);
        for i in 0..8 {
            for j in 0..3 {
                a.set(i, j, q[(i, j)]);
            }
        }
        let mut exec = Executor::reference();
        let (u, sigma, v) = tall_skinny_svd(&a, &mut exec).unwrap();
        for s in &sigma {
            assert!((s - 1.0).abs() < 1e-10, "sigma {s}");
        }
        // U = A V when all singular values are 1.
        let av = matmul_reference(&a, &v.transpose()).unwrap();
        assert!(u.rel_frobenius_distance(&av).unwrap() < 1e-10);
    }

    #[test]
    fn known_diagonal_case_is_axis_aligned() {
        let a = DenseMatrix::from_rows(&[
            vec![3.0, 0.0],
            vec![0.0, 2.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let mut exec = Executor::reference();
        let (u, sigma, v) = tall_skinny_svd(&a, &mut exec).unwrap();
        assert!((sigma[0] - 3.0).abs() < 1e-12 && (sigma[1] - 2.0).abs() < 1e-12);
        assert!((v.get(0, 0) - 1.0).abs() < 1e-12 && (v.get(1, 1) - 1.0).abs() < 1e-12);
        assert!((u.get(0, 0) - 1.0).abs() < 1e-12 && (u.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_tall_matrix_passes_reconstruction_and_orthogonality_audit() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let a = DenseMatrix::random_uniform(96, 12, -1.0, 1.0, &mut rng);
        let mut exec = Executor::reference();
        let (u, sigma, v) = tall_skinny_svd(&a, &mut exec).unwrap();
        assert!(
            reconstruct(&u, &sigma, &v)
                .rel_frobenius_distance(&a)
                .unwrap()
                < 1e-8
        );
        let utu = matmul_reference(&u.transpose(), &u.transpose()).unwrap();
        let vtv = matmul_reference(&v.transpose(), &v.transpose()).unwrap();
        let id = DenseMatrix::identity(12);
        assert!(utu.sub(&id).unwrap().max_abs() < 1e-8);
        assert!(vtv.sub(&id).unwrap().max_abs() < 1e-10);
        for w in sigma.windows(2) {
            assert!(w[0] >= w[1], "singular values not sorted: {w:?}");
        }
    }

    #[test]
    fn rank_deficient_matrix_gets_zero_columns() {
        // Rank 1: every column is a multiple of the first.
        let mut a = DenseMatrix::zeros(10, 3);
        for i in 0..10 {
            let base = (i as f64) - 4.5;
            a.set(i, 0, base);
            a.set(i, 1, 2.0 * base);
            a.set(i, 2, -base);
        }
        let mut exec = Executor::reference();
        let (u, sigma, v) = tall_skinny_svd(&a, &mut exec).unwrap();
        assert!(sigma[0] > 1.0 && sigma[1] < 1e-10 && sigma[2] < 1e-10);
        for col in 1..3 {
            for i in 0..10 {
                assert_eq!(u.get(i, col), 0.0, "column {col} not zeroed");
            }
        }
        assert!(
            reconstruct(&u, &sigma, &v)
                .rel_frobenius_distance(&a)
                .unwrap()
                < 1e-10
        );
    }

    // --- error paths ---

    #[test]
    fn zero_matrix_is_rank_zero() {
        let a = DenseMatrix::zeros(6, 2);
        let mut exec = Executor::reference();
        match tall_skinny_svd(&a, &mut exec) {
            Err(Error::RankZero) => {}
            other => panic!("expected RankZero, got {other:?}"),
        }
    }

    #[test]
    fn wide_matrix_is_rejected() {
        let a = DenseMatrix::zeros(2, 6);
        let mut exec = Executor::reference();
        assert!(tall_skinny_svd(&a, &mut exec).is_err());
    }

    // --- executor equivalence ---

    #[test]
    fn coded_executor_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let a = DenseMatrix::random_uniform(24, 4, -1.0, 1.0, &mut rng);
        let mut reference = Executor::reference();
        let (u_ref, s_ref, v_ref) = tall_skinny_svd(&a, &mut reference).unwrap();

        let params = CodeParams::new(2, 2, 4, 2).unwrap();
        let mut coded = Executor::coded(params, quiet_cfg()).unwrap();
        let (u_cod, s_cod, v_cod) = tall_skinny_svd(&a, &mut coded).unwrap();
        assert!(u_cod.rel_frobenius_distance(&u_ref).unwrap() < 1e-8);
        assert!(v_cod.rel_frobenius_distance(&v_ref).unwrap() < 1e-8);
        for (a, b) in s_ref.iter().zip(&s_cod) {
            assert!((a - b).abs() <= 1e-8 * a.max(1.0));
        }
        assert_eq!(coded.reports().len(), 2);
    }
}
