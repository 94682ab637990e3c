//! Gauss-Legendre rules on [-1, 1] and their tensor products on axis-aligned boxes.

use crate::geometry::BoxNd;

/// Points and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
///
/// Nodes are found by Newton iteration on P_n starting from the Chebyshev guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss rule needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
    (points, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature point in global coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: [f64; 3],
    pub weight: f64,
}

/// Tensor Gauss rule with `order` points per direction mapped onto `bounds`.
pub fn tensor_gauss(bounds: &BoxNd, order: usize) -> Vec<QuadPoint> {
    let (xi, wi) = gauss_legendre(order);
    let d = bounds.dim();
    let total = order.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = flat;
        let mut x = [0.0; 3];
        let mut w = 1.0;
        for a in 0..d {
            let k = idx % order;
            idx /= order;
            let half = 0.5 * (bounds.hi[a] - bounds.lo[a]);
            x[a] = bounds.lo[a] + half * (xi[k] + 1.0);
            w *= wi[k] * half;
        }
        out.push(QuadPoint { x, weight: w });
    }
    out
}
