//! Gauss–Legendre rules and geometric panel grids used to integrate against
//! Lévy densities.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
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

/// Composite rule on `[lo, hi]` (0 < lo < hi) with geometrically spaced panel
/// edges, so that panels shrink towards the origin.
pub fn geometric_panels(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (gx, gw) = gauss_legendre(order);
    let ratio = (hi / lo).ln() / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for k in 0..panels {
        let a = lo * (ratio * k as f64).exp();
        let b = if k + 1 == panels {
            hi
        } else {
            lo * (ratio * (k + 1) as f64).exp()
        };
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        for (x, w) in gx.iter().zip(&gw) {
            out.push((mid + half * x, half * w));
        }
    }
    out
}

/// Plain Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn mapped_rule(lo: f64, hi: f64, order: usize) -> Vec<(f64, f64)> {
    let (gx, gw) = gauss_legendre(order);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    gx.iter()
        .zip(&gw)
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}
