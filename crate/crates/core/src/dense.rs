//! Dense symmetric eigenvalue routines.

use nalgebra::DMatrix;

use crate::error::{FcmError, Result};

/// Eigenvalues (ascending) and eigenvectors (columns, same order).
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FcmError::Invalid(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FcmError::Numerical("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Cyclic Jacobi rotations.
///
/// A pair is skipped once `|a_ij| <= tol * sqrt(|a_ii a_jj|)`, which gives small
/// eigenvalues of graded positive definite matrices to high relative accuracy.
/// Stops after a sweep without rotations or after `max_sweeps`.
pub fn jacobi_eigen(m: &DMatrix<f64>, tol: f64, max_sweeps: usize) -> Result<Eigen> {
    check_square_finite(m)?;
    let n = m.nrows();
    let mut a = m.clone();
    a = (&a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                if apq.abs() <= tol * (app * aqq).abs().sqrt() {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    Ok(sorted(a.diagonal().iter().copied().collect(), v))
}

/// Symmetric eigen-decomposition by Householder tridiagonalization and implicit QR.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<Eigen> {
    check_square_finite(m)?;
    let e = nalgebra::SymmetricEigen::new(m.clone());
    Ok(sorted(e.eigenvalues.iter().copied().collect(), e.eigenvectors))
}

fn sorted(values: Vec<f64>, vectors: DMatrix<f64>) -> Eigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let vals = order.iter().map(|&i| values[i]).collect();
    let vecs = DMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    Eigen { values: vals, vectors: vecs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn jacobi_matches_qr() {
        let a = jacobi_eigen(&sample(), 1e-15, 30).unwrap();
        let b = symmetric_eigen(&sample()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-13);
        }
        let recon = &a.vectors * DMatrix::from_diagonal(&a.values.clone().into()) * a.vectors.transpose();
        assert!((recon - sample()).abs().max() < 1e-13);
    }

    #[test]
    fn jacobi_resolves_graded_eigenvalues() {
        // diag(1, 1e-30) coupled weakly relative to the small scale.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1e-20, 1e-20, 2e-30]);
        let e = jacobi_eigen(&m, 1e-15, 30).unwrap();
        let exact_small = 2e-30 - 1e-40;
        assert!(((e.values[0] - exact_small) / exact_small).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut m = sample();
        m[(0, 1)] = f64::NAN;
        assert!(symmetric_eigen(&m).is_err());
    }
}
