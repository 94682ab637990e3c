//! Preconditioned conjugate gradients, dense reference solves and spectra.

use nalgebra::{DMatrix, DVector};

use crate::dense::{jacobi_eigen, symmetric_eigen};
use crate::error::{FcmError, Result};
use crate::sparse::{dot, norm, CsrMatrix, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIter,
    Breakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `‖S r_i‖ / ‖S b‖` after each iteration.
    pub residuals: Vec<f64>,
    /// `‖x_ref - x_i‖_A / ‖x_ref‖_A` after each iteration, when a reference was given.
    pub energy_errors: Vec<f64>,
    pub iterations: usize,
    pub reason: Termination,
    pub diagnostics: Option<String>,
}

impl SolveReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }
}

fn energy_norm(a: &dyn LinearOperator, v: &[f64]) -> f64 {
    dot(v, &a.apply(v)).max(0.0).sqrt()
}

/// PCG with `z = S r`, stopping on `‖S r_i‖ / ‖S b‖ <= tol`, starting from zero.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    s: &dyn LinearOperator,
    tol: f64,
    max_iter: usize,
    x_ref: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.size();
    if b.len() != n || s.size() != n || x_ref.is_some_and(|x| x.len() != n) {
        return Err(FcmError::Invalid(format!(
            "dimension mismatch: A is {n}, b is {}, S is {}",
            b.len(),
            s.size()
        )));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = s.apply(&r);
    let sb = norm(&z);
    let ref_norm = x_ref.map(|xr| energy_norm(a, xr));
    let mut report = SolveReport {
        residuals: Vec::new(),
        energy_errors: Vec::new(),
        iterations: 0,
        reason: Termination::Tolerance,
        diagnostics: None,
    };
    if sb == 0.0 {
        return Ok((x, report));
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        if rz <= 0.0 {
            report.reason = Termination::Breakdown;
            report.diagnostics = Some(format!("rᵀSr = {rz:e} at iteration {it}"));
            return Ok((x, report));
        }
        a.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            report.reason = Termination::Breakdown;
            report.diagnostics = Some(format!("pᵀAp = {pap:e} at iteration {it}"));
            return Ok((x, report));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        s.apply_into(&r, &mut z);
        let rel = norm(&z) / sb;
        report.residuals.push(rel);
        if let (Some(xr), Some(rn)) = (x_ref, ref_norm) {
            let e: Vec<f64> = xr.iter().zip(&x).map(|(a, b)| a - b).collect();
            report.energy_errors.push(if rn > 0.0 { energy_norm(a, &e) / rn } else { 0.0 });
        }
        report.iterations = it;
        if !rel.is_finite() {
            report.reason = Termination::Breakdown;
            report.diagnostics = Some(format!("non-finite residual at iteration {it}"));
            return Ok((x, report));
        }
        if rel <= tol {
            report.reason = Termination::Tolerance;
            return Ok((x, report));
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    report.reason = Termination::MaxIter;
    Ok((x, report))
}

pub const MAX_DENSE: usize = 20_000;

/// Dense reference solution: Cholesky when SPD, minimum-norm eigen solve when singular PSD.
pub fn reference_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n();
    if n > MAX_DENSE {
        return Err(FcmError::Invalid(format!("dense reference solve limited to {MAX_DENSE} unknowns, got {n}")));
    }
    if b.len() != n {
        return Err(FcmError::Invalid("right-hand side length mismatch".into()));
    }
    let d = a.to_dense();
    if let Some(ch) = d.clone().cholesky() {
        return Ok(ch.solve(&DVector::from_column_slice(b)).as_slice().to_vec());
    }
    let eig = symmetric_eigen(&d)?;
    let max = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * max * n as f64;
    if eig.values.iter().any(|&l| l < -tol) {
        return Err(FcmError::Numerical(format!(
            "matrix is indefinite (smallest eigenvalue {:e})",
            eig.values[0]
        )));
    }
    let bv = DVector::from_column_slice(b);
    let mut x = DVector::zeros(n);
    for (k, &l) in eig.values.iter().enumerate() {
        if l > tol {
            let v = eig.vectors.column(k);
            x += v * (v.dot(&bv) / l);
        }
    }
    Ok(x.as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

impl SpectralReport {
    fn from_values(values: &[f64]) -> Self {
        let lambda_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SpectralReport { lambda_min, lambda_max, kappa: lambda_max / lambda_min }
    }
}

/// Largest matrix whose spectrum uses Jacobi rotations; larger ones use QR iteration.
pub const MAX_JACOBI: usize = 600;

/// Extreme eigenvalues; cyclic Jacobi with a relative stopping test resolves tiny
/// eigenvalues of graded matrices to high relative accuracy.
pub fn spectrum(m: &DMatrix<f64>) -> Result<SpectralReport> {
    if m.nrows() > 2000 {
        return Err(FcmError::Invalid(format!("dense spectrum limited to 2000 unknowns, got {}", m.nrows())));
    }
    let e = if m.nrows() <= MAX_JACOBI { jacobi_eigen(m, 1e-15, 60)? } else { symmetric_eigen(m)? };
    Ok(SpectralReport::from_values(&e.values))
}

/// Spectrum of `S^{1/2} A S^{1/2}` with the square root taken on the range of `S`.
pub fn preconditioned_spectrum(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<SpectralReport> {
    let es = symmetric_eigen(s)?;
    let max = es.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<usize> = (0..es.values.len()).filter(|&k| es.values[k] > 1e-13 * max).collect();
    let n = a.nrows();
    let root = DMatrix::from_fn(n, keep.len(), |r, c| es.vectors[(r, keep[c])] * es.values[keep[c]].sqrt());
    let m = root.transpose() * a * &root;
    let m = (&m + m.transpose()) * 0.5;
    let e = symmetric_eigen(&m)?;
    Ok(SpectralReport::from_values(&e.values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_in_one_step() {
        let a = CsrMatrix::identity(5);
        let b = [1.0, -2.0, 3.0, 0.5, 0.0];
        let (x, rep) = pcg(&a, &b, &a, 1e-12, 10, None).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(x, b.to_vec());
    }

    #[test]
    fn two_by_two_hand_solution() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let (x, rep) = pcg(&a, &[1.0, 2.0], &CsrMatrix::identity(2), 1e-14, 10, None).unwrap();
        assert!(rep.iterations <= 2);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14 && (x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_preconditioner_breaks_down() {
        let a = CsrMatrix::identity(2);
        let s = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        let (_, rep) = pcg(&a, &[1.0, 1.0], &s, 1e-12, 10, None).unwrap();
        assert_eq!(rep.reason, Termination::Breakdown);
    }

    #[test]
    fn reference_solves() {
        let a = CsrMatrix::from_diagonal(&[2.0, 4.0]);
        let x = reference_solve(&a, &[2.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let s = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)]).unwrap();
        let x = reference_solve(&s, &[1.0, -1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14 && (x[1] + 0.5).abs() < 1e-14);
        let ind = CsrMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(reference_solve(&ind, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn spectra() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(spectrum(&id).unwrap().kappa, 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 100.0]));
        assert!((spectrum(&d).unwrap().kappa - 100.0).abs() < 1e-12);
        let inv = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.01]));
        assert!((preconditioned_spectrum(&d, &inv).unwrap().kappa - 1.0).abs() < 1e-12);
    }
}
