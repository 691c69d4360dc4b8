//! Small numeric helpers: the Moore-Penrose pseudo-inverse and the sparse
//! localized product used throughout the solver.

use crate::error::{Error, Result};
use crate::neighborhood::NeighborModel;
use nalgebra::DMatrix;

/// Relative singular-value cutoff for the pseudo-inverse: values below
/// `PINV_RCOND * sigma_max` are treated as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse via SVD with a rank-revealing cutoff at
/// `PINV_RCOND * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or(Error::DecompositionFailed)?;
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.pseudo_inverse(PINV_RCOND * smax).map_err(|_| Error::DecompositionFailed)
}

/// Compute `(H (*) W) * F` exploiting that H has exactly k nonzeros per
/// row: row i of the result is the weighted sum of F's rows at i's
/// neighbors. Costs n*k*m instead of a dense n^2*m product.
pub fn localized_product(
    nbr: &NeighborModel,
    w: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = f.nrows();
    let m = f.ncols();
    let mut out = DMatrix::zeros(n, m);
    // Column-major traversal keeps both F reads and output writes local.
    for c in 0..m {
        for i in 0..n {
            let mut acc = 0.0;
            for &j in &nbr.neighbors[i] {
                acc += w[(i, j)] * f[(j, c)];
            }
            out[(i, c)] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent SVD oracle: one-sided Jacobi. Rotates column pairs of A
    /// until mutually orthogonal; singular values are the column norms,
    /// U the normalized columns, V the accumulated rotations. Used only to
    /// cross-check the production pseudo-inverse, which goes through a
    /// different (Golub-Kahan) decomposition.
    fn jacobi_pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
        let m = a.nrows();
        let n = a.ncols();
        let mut u = a.clone();
        let mut v = DMatrix::<f64>::identity(n, n);
        for _sweep in 0..60 {
            let mut off = 0.0_f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for r in 0..m {
                        app += u[(r, p)] * u[(r, p)];
                        aqq += u[(r, q)] * u[(r, q)];
                        apq += u[(r, p)] * u[(r, q)];
                    }
                    off = off.max(apq.abs() / (app * aqq).sqrt().max(1e-300));
                    if apq.abs() < 1e-30 {
                        continue;
                    }
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..m {
                        let up = u[(r, p)];
                        let uq = u[(r, q)];
                        u[(r, p)] = c * up - s * uq;
                        u[(r, q)] = s * up + c * uq;
                    }
                    for r in 0..n {
                        let vp = v[(r, p)];
                        let vq = v[(r, q)];
                        v[(r, p)] = c * vp - s * vq;
                        v[(r, q)] = s * vp + c * vq;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let sigmas: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
        let smax = sigmas.iter().cloned().fold(0.0_f64, f64::max);
        // pinv = V diag(1/sigma) U_normalized^T, dropping cut singular values.
        let mut out = DMatrix::zeros(n, m);
        for j in 0..n {
            if sigmas[j] > rcond * smax && sigmas[j] > 0.0 {
                let uj = u.column(j) / sigmas[j];
                let vj = v.column(j);
                for r in 0..n {
                    for cidx in 0..m {
                        out[(r, cidx)] += vj[r] * uj[cidx] / sigmas[j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pinv_inverts_a_square_invertible_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 3.0]);
        let p = pinv(&a).unwrap();
        let ident = &a * &p;
        assert_relative_eq!(ident, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn pinv_satisfies_row_space_projection_identity() {
        // pinv(A) * A projects onto A's row space, so (A+ A) A^T = A^T.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0));
        let p = pinv(&a).unwrap();
        let proj = &p * &a;
        let lhs = &proj * a.transpose();
        assert_relative_eq!(lhs, a.transpose(), epsilon = 1e-10);
    }

    #[test]
    fn pinv_matches_jacobi_oracle_on_rank_deficient_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let mut a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-3.0..3.0));
            // Force rank deficiency: last column equals sum of first two.
            let dep = a.column(0) + a.column(1);
            a.set_column(3, &dep);
            let p = pinv(&a).unwrap();
            let oracle = jacobi_pinv(&a, PINV_RCOND);
            let err = (&p - &oracle).norm() / oracle.norm().max(1.0);
            assert!(err < 1e-8, "trial {trial}: pinv deviates from oracle by {err}");
        }
    }

    #[test]
    fn pinv_of_zero_matrix_is_zero() {
        let a = DMatrix::<f64>::zeros(3, 3);
        let p = pinv(&a).unwrap();
        assert_eq!(p, DMatrix::zeros(3, 3));
    }

    #[test]
    fn localized_product_matches_dense_masked_multiply() {
        use crate::neighborhood::NeighborModel;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 7;
        let k = 3;
        // Random pattern with k neighbors per row, none on the diagonal.
        let mut neighbors = Vec::new();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            for c in (1..cand.len()).rev() {
                cand.swap(c, rng.gen_range(0..=c));
            }
            cand.truncate(k);
            cand.sort_unstable();
            for &j in &cand {
                h[(i, j)] = 1.0;
            }
            neighbors.push(cand);
        }
        let nbr = NeighborModel { k, h: h.clone(), neighbors };
        let w = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let f = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..10.0));
        let fast = localized_product(&nbr, &w, &f);
        let dense = h.component_mul(&w) * &f;
        assert_relative_eq!(fast, dense, epsilon = 1e-12);
    }
}
