//! Compressed-row storage for symmetric matrices (full pattern stored).

use rayon::prelude::*;

use crate::error::{FcmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Anything that can apply a linear map to a vector.
pub trait LinearOperator: Sync {
    fn size(&self) -> usize;
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size()];
        self.apply_into(x, &mut y);
        y
    }
}

impl CsrMatrix {
    pub fn zeros(n: usize) -> Self {
        CsrMatrix { n, row_ptr: vec![0; n + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        m.values.copy_from_slice(d);
        m
    }

    /// Sums duplicate entries in input order, which makes the result independent of
    /// anything but the triplet sequence.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(FcmError::Invalid(format!("triplet ({i}, {j}) out of range for size {n}")));
            }
            rows[i].push((j, v));
        }
        let mut m = CsrMatrix::zeros(n);
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == col {
                    sum += row[k].1;
                    k += 1;
                }
                m.col_idx.push(col);
                m.values.push(sum);
            }
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        Ok(m)
    }

    /// Builds from per-row sorted patterns with zero values.
    pub fn from_pattern(n: usize, rows: Vec<Vec<usize>>) -> Self {
        let mut m = CsrMatrix::zeros(n);
        for (i, row) in rows.into_iter().enumerate() {
            m.col_idx.extend(row);
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        m.values = vec![0.0; m.col_idx.len()];
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.col_idx[start..self.row_ptr[i + 1]].binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn from_dense(d: &nalgebra::DMatrix<f64>) -> Self {
        let n = d.nrows();
        let mut m = CsrMatrix::zeros(n);
        for i in 0..n {
            for j in 0..d.ncols() {
                if d[(i, j)] != 0.0 {
                    m.col_idx.push(j);
                    m.values.push(d[(i, j)]);
                }
            }
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        m
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// Keeps only the listed rows; other rows become empty.
    pub fn restrict_rows(&self, keep: &[bool]) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.n);
        for i in 0..self.n {
            if keep[i] {
                let (c, v) = self.row(i);
                m.col_idx.extend_from_slice(c);
                m.values.extend_from_slice(v);
            }
            m.row_ptr[i + 1] = m.col_idx.len();
        }
        m
    }

    /// Position-weighted sum of the stored values of `rows`, for cheap row comparisons.
    pub fn row_checksum(&self, rows: &[usize]) -> f64 {
        rows.iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &x)| x * (1.0 + ((i * 31 + j) % 97) as f64)).sum::<f64>()
            })
            .sum()
    }
}

impl LinearOperator for CsrMatrix {
    fn size(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "vector length does not match matrix size");
        y.par_iter_mut().enumerate().with_min_len(256).for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        });
    }
}

impl LinearOperator for nalgebra::DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let v = self * nalgebra::DVector::from_column_slice(x);
        y.copy_from_slice(v.as_slice());
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
