//! Additive-Schwarz preconditioner `S = Σ_B R_Bᵀ A_B⁺ R_B` with diagonal scaling of
//! uncovered DOFs.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::blocks::BlockSet;
use crate::dense::symmetric_eigen;
use crate::error::{FcmError, Result};
use crate::sparse::{CsrMatrix, LinearOperator};

/// How block inverses treat small eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverseMode {
    /// Zero every eigenvalue `λ <= ε max λ`, negative ones included.
    Stabilized { epsilon: f64 },
    /// Invert every nonzero eigenvalue, keeping its sign. Equivalent to a plain inverse.
    Plain,
}

impl InverseMode {
    pub fn stabilized(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(FcmError::config(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(InverseMode::Stabilized { epsilon })
    }
}

#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub matrix: DMatrix<f64>,
    pub discarded: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// `(A_B)_ij = A[B_i, B_j]`.
pub fn extract_submatrix(a: &CsrMatrix, indices: &[usize]) -> DMatrix<f64> {
    let m = indices.len();
    let mut out = DMatrix::zeros(m, m);
    for (r, &i) in indices.iter().enumerate() {
        let (cols, vals) = a.row(i);
        let mut k = 0;
        for (c, &j) in indices.iter().enumerate() {
            while k < cols.len() && cols[k] < j {
                k += 1;
            }
            if k < cols.len() && cols[k] == j {
                out[(r, c)] = vals[k];
            }
        }
    }
    out
}

pub fn pseudo_inverse(block: &DMatrix<f64>, mode: InverseMode) -> Result<BlockInverse> {
    let eig = symmetric_eigen(block)?;
    let max = eig.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut discarded = 0;
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            let keep = match mode {
                InverseMode::Stabilized { epsilon } => l > epsilon * max,
                InverseMode::Plain => l != 0.0,
            };
            if keep {
                1.0 / l
            } else {
                discarded += 1;
                0.0
            }
        })
        .collect();
    let v = &eig.vectors;
    let m = block.nrows();
    let mut out = DMatrix::zeros(m, m);
    for (k, &s) in inv.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for c in 0..m {
            let vc = s * v[(c, k)];
            for r in 0..m {
                out[(r, c)] += v[(r, k)] * vc;
            }
        }
    }
    let sym = (&out + out.transpose()) * 0.5;
    Ok(BlockInverse { matrix: sym, discarded, min_eigenvalue: min, max_eigenvalue: max })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub blocks: usize,
    pub discarded_eigenvalues: usize,
    pub diagonal_fallbacks: usize,
    pub nonzeros: usize,
    /// Smallest `λ_min / λ_max` over all blocks.
    pub min_block_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Preconditioner {
    pub s: CsrMatrix,
    pub stats: BuildStats,
}

impl LinearOperator for Preconditioner {
    fn size(&self) -> usize {
        self.s.n()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.s.apply_into(x, y)
    }
}

/// Builds the rows of `S` flagged in `rows` (all rows when `None`) from the given blocks.
///
/// Blocks are inverted in parallel and scattered in block order, so values do not depend on
/// the worker count.
pub fn build_rows(a: &CsrMatrix, set: &BlockSet, mode: InverseMode, rows: Option<&[bool]>) -> Result<Preconditioner> {
    let n = a.n();
    if set.n != n {
        return Err(FcmError::Invalid(format!("block set is for {} DOFs, matrix has {n}", set.n)));
    }
    let wanted = |i: usize| rows.is_none_or(|r| r[i]);
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for b in &set.blocks {
        for &i in &b.indices {
            if wanted(i) {
                pattern[i].extend_from_slice(&b.indices);
            }
        }
    }
    for i in 0..n {
        if wanted(i) {
            pattern[i].push(i);
        }
        pattern[i].sort_unstable();
        pattern[i].dedup();
    }
    let mut s = CsrMatrix::from_pattern(n, pattern);
    let mut stats = BuildStats { blocks: set.blocks.len(), min_block_ratio: f64::INFINITY, ..Default::default() };

    for chunk in set.blocks.chunks(256) {
        let inverses: Result<Vec<BlockInverse>> =
            chunk.par_iter().map(|b| pseudo_inverse(&extract_submatrix(a, &b.indices), mode)).collect();
        for (b, inv) in chunk.iter().zip(inverses?) {
            stats.discarded_eigenvalues += inv.discarded;
            if inv.max_eigenvalue > 0.0 {
                stats.min_block_ratio = stats.min_block_ratio.min(inv.min_eigenvalue / inv.max_eigenvalue);
            }
            let m = b.indices.len();
            for (r, &gi) in b.indices.iter().enumerate() {
                if !wanted(gi) {
                    continue;
                }
                let start = s.row_ptr[gi];
                let mut k = start;
                for c in 0..m {
                    let gj = b.indices[c];
                    while s.col_idx[k] < gj {
                        k += 1;
                    }
                    s.values[k] += inv.matrix[(r, c)];
                }
            }
        }
    }

    for l in 0..n {
        if !wanted(l) {
            continue;
        }
        let k = s.position(l, l).expect("diagonal in pattern");
        if s.values[k] == 0.0 {
            let all = a.get(l, l);
            if all == 0.0 {
                return Err(FcmError::ZeroDiagonal { dof: l });
            }
            s.values[k] = 1.0 / all;
            stats.diagonal_fallbacks += 1;
        }
    }
    stats.nonzeros = s.nnz();
    Ok(Preconditioner { s, stats })
}

pub fn build(a: &CsrMatrix, set: &BlockSet, mode: InverseMode) -> Result<Preconditioner> {
    build_rows(a, set, mode, None)
}
