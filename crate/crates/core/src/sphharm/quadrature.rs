use std::f64::consts::PI;

use super::{max_degree, SampledPattern, SphericalDirection};
use crate::error::{domain, Result};

/// Grid used when no truncation-specific size is requested: exact for bases up to
/// degree 62.
pub const DEFAULT_GRID: (usize, usize) = (64, 128);

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n
        let mut x = ((i as f64 + 0.75) / (nf + 0.5) * PI).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Product grid: Gauss–Legendre in `cos θ` crossed with `n_phi` uniform azimuths.
///
/// The returned pattern has zero gains; the weights already carry the `sin θ dθ dφ`
/// measure and integrate polynomials in `cos θ` up to degree `2·n_theta − 1`
/// (times trigonometric polynomials in `φ` up to degree `n_phi − 1`) exactly.
pub fn quadrature_grid(n_theta: usize, n_phi: usize) -> Result<SampledPattern> {
    if n_theta < 2 || n_phi < 2 {
        return domain(format!("quadrature grid {n_theta}×{n_phi} needs at least 2×2 nodes"));
    }
    let (x, w) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut directions = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    // descending x so theta increases
    for i in (0..n_theta).rev() {
        let theta = x[i].clamp(-1.0, 1.0).acos();
        for j in 0..n_phi {
            directions.push(SphericalDirection { theta, phi: -PI + j as f64 * dphi });
            weights.push(w[i] * dphi);
        }
    }
    let gains = vec![0.0; directions.len()];
    SampledPattern::new(directions, gains, weights)
}

/// Smallest grid that integrates products of the first `k_count` bases exactly:
/// `n_theta = 2·c_max + 2`, `n_phi = 2·(2·c_max + 1)`.
pub fn grid_for_truncation(k_count: usize) -> Result<SampledPattern> {
    let c_max = max_degree(k_count.max(1)) as usize;
    quadrature_grid(2 * c_max + 2, 2 * (2 * c_max + 1))
}
