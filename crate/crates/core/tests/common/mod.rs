//! Brute-force references for tests. Nothing here calls production matrix code.

#![allow(dead_code)]

pub type Dense = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Dense {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a.first().map_or(0, Vec::len));
    let mut t = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (r, k, c) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = zeros(r, c);
    for i in 0..r {
        for l in 0..k {
            let x = a[i][l];
            if x != 0.0 {
                for j in 0..c {
                    out[i][j] += x * b[l][j];
                }
            }
        }
    }
    out
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Eigenvalues (ascending) and column eigenvectors by cyclic Jacobi rotations.
pub fn jacobi_eigen(m: &Dense) -> (Vec<f64>, Dense) {
    let n = m.len();
    let mut a = m.clone();
    let mut v = identity(n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 { 1.0 } else { theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt()) };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&c| v[r][c]).collect()).collect();
    (values, vectors)
}

/// Pseudo-inverse keeping eigenvalues above `epsilon` times the largest.
pub fn pseudo_inverse(m: &Dense, epsilon: f64) -> Dense {
    let n = m.len();
    let (vals, vecs) = jacobi_eigen(m);
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = zeros(n, n);
    for k in 0..n {
        if vals[k] > epsilon * max {
            for i in 0..n {
                for j in 0..n {
                    out[i][j] += vecs[i][k] * vecs[j][k] / vals[k];
                }
            }
        }
    }
    out
}

/// `Σ_B R_Bᵀ (R_B A R_Bᵀ)⁺ R_B` with explicit restriction matrices; zero diagonal entries become `1/A_kk`.
pub fn dense_schwarz(a: &Dense, blocks: &[Vec<usize>], epsilon: f64) -> Dense {
    let n = a.len();
    assert!(n <= 500, "oracle limited to 500 unknowns");
    let mut s = zeros(n, n);
    for b in blocks {
        let mut r = zeros(b.len(), n);
        for (row, &i) in b.iter().enumerate() {
            r[row][i] = 1.0;
        }
        let rt = transpose(&r);
        let ab = matmul(&matmul(&r, a), &rt);
        let term = matmul(&matmul(&rt, &pseudo_inverse(&ab, epsilon)), &r);
        for i in 0..n {
            for j in 0..n {
                s[i][j] += term[i][j];
            }
        }
    }
    for k in 0..n {
        if s[k][k] == 0.0 {
            s[k][k] = 1.0 / a[k][k];
        }
    }
    s
}

/// Gauss-Jordan inverse with partial pivoting; `None` if numerically singular.
pub fn inverse(m: &Dense) -> Option<Dense> {
    let n = m.len();
    let mut a = m.clone();
    let mut inv = identity(n);
    let scale = m.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}

pub fn solve(a: &Dense, b: &[f64]) -> Option<Vec<f64>> {
    inverse(a).map(|inv| matvec(&inv, b))
}

/// Checks `e_kᵀ S⁻¹ e_k <= A_kk / n(k) + 1e-10` for every `k`, where `n(k)` counts the
/// blocks containing `k`. Returns `None` when `S` is singular.
pub fn rayleigh_bound_check(a: &Dense, blocks: &[Vec<usize>]) -> Option<bool> {
    let n = a.len();
    let s = dense_schwarz(a, blocks, 0.0);
    let sinv = inverse(&s)?;
    let mut count = vec![0usize; n];
    for b in blocks {
        for &i in b {
            count[i] += 1;
        }
    }
    Some((0..n).all(|k| count[k] == 0 || sinv[k][k] <= a[k][k] / count[k] as f64 + 1e-10))
}

/// Central differences per axis.
pub fn fd_gradient(f: &dyn Fn(&[f64; 3]) -> f64, x: &[f64; 3], dim: usize, h: f64) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (a, ga) in g.iter_mut().enumerate().take(dim) {
        let mut xp = *x;
        let mut xm = *x;
        xp[a] += h;
        xm[a] -= h;
        *ga = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Fraction of an `res^dim` grid of sample points inside `inside`.
pub fn sampled_fraction(inside: &dyn Fn(&[f64; 3]) -> bool, lo: [f64; 3], hi: [f64; 3], dim: usize, res: usize) -> f64 {
    let total = res.pow(dim as u32);
    let mut hits = 0usize;
    for flat in 0..total {
        let mut x = [0.0; 3];
        let mut rest = flat;
        for a in 0..dim {
            let i = rest % res;
            rest /= res;
            x[a] = lo[a] + (i as f64 + 0.5) / res as f64 * (hi[a] - lo[a]);
        }
        if inside(&x) {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Deterministic symmetric positive definite matrix with entries of order one.
pub fn random_spd(n: usize, rng: &mut impl rand::Rng) -> Dense {
    let b: Dense = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut a = matmul(&b, &transpose(&b));
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 0.1 * n as f64;
    }
    a
}
