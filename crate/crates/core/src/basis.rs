//! One-dimensional hierarchic shape functions on [-1, 1].
//!
//! Mode 0 is the left hat `(1 - ξ)/2`, mode 1 the right hat `(1 + ξ)/2`.
//! Mode `i >= 2` is the integrated Legendre polynomial of degree `i`,
//! `(P_i - P_{i-2}) / sqrt(4i - 2)`, which vanishes at both endpoints and
//! has L2-orthonormal derivatives.

/// Legendre values `P_0..=P_n` at `xi` by the three-term recurrence.
pub fn legendre(n: usize, xi: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(xi);
    }
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * xi * p[k - 1] - (kf - 1.0) * p[k - 2]) / kf;
        p.push(next);
    }
    p
}

/// Values of all `p + 1` modes at `xi`.
pub fn eval_modes(p: usize, xi: f64) -> Vec<f64> {
    let mut out = vec![0.0; p + 1];
    eval_modes_into(p, xi, &mut out, None);
    out
}

/// Derivatives `d/dξ` of all `p + 1` modes at `xi`.
pub fn eval_derivatives(p: usize, xi: f64) -> Vec<f64> {
    let mut vals = vec![0.0; p + 1];
    let mut ders = vec![0.0; p + 1];
    eval_modes_into(p, xi, &mut vals, Some(&mut ders));
    ders
}

/// Fills `values` (and optionally `derivatives`) with the `p + 1` modes at `xi`.
///
/// Uses `d/dξ (P_i - P_{i-2}) = (2i - 1) P_{i-1}`.
pub fn eval_modes_into(p: usize, xi: f64, values: &mut [f64], derivatives: Option<&mut [f64]>) {
    debug_assert!(p >= 1);
    debug_assert!(values.len() > p);
    let leg = legendre(p, xi);
    values[0] = 0.5 * (1.0 - xi);
    values[1] = 0.5 * (1.0 + xi);
    for i in 2..=p {
        values[i] = (leg[i] - leg[i - 2]) / ((4 * i - 2) as f64).sqrt();
    }
    if let Some(d) = derivatives {
        d[0] = -0.5;
        d[1] = 0.5;
        for i in 2..=p {
            d[i] = (2 * i - 1) as f64 * leg[i - 1] / ((4 * i - 2) as f64).sqrt();
        }
    }
}
