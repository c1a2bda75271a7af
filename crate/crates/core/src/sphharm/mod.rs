//! Real spherical-harmonic bases and radiation-pattern decomposition.
//!
//! Basis `k` (one-based) is the real harmonic of degree `c` and order `r` with
//! `k = c² + c + r + 1`:
//!
//! ```text
//!   r > 0 : (-1)^r √2 K_c^r cos(rφ)  P_c^r(cos θ)
//!   r < 0 : (-1)^r √2 K_c^r sin(-rφ) P_c^-r(cos θ)
//!   r = 0 :            K_c^0        P_c^0(cos θ)
//! ```
//!
//! with `K_c^r = sqrt((2c+1)/4π · (c-|r|)!/(c+|r|)!)`. The Legendre kernel below
//! evaluates `K_c^r P_c^r` *without* the Condon–Shortley phase; the `(-1)^r`
//! factor is applied once, here.

mod baseline;
mod pattern;
mod quadrature;

pub use baseline::{baseline_pattern, BaselinePattern};
pub use pattern::{
    fit_pattern, pattern_nmse, project_pattern, read_pattern_csv, reconstruct_pattern, write_pattern_csv,
    PatternCoefficients, SampledPattern,
};
pub use quadrature::{gauss_legendre, grid_for_truncation, quadrature_grid, DEFAULT_GRID};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Direction on the unit sphere: zenith `theta ∈ [0, π]`, azimuth `phi ∈ [-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalDirection {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalDirection {
    /// Builds a direction, wrapping the azimuth into `[-π, π)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !phi.is_finite() {
            return domain(format!("zenith {theta} outside [0, π] or non-finite azimuth"));
        }
        Ok(Self { theta, phi: wrap_azimuth(phi) })
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// Cartesian unit vector `[sinθ cosφ, sinθ sinφ, cosθ]`.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

pub(crate) fn wrap_azimuth(phi: f64) -> f64 {
    let wrapped = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// Degree/order pair of a real spherical harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShIndex {
    pub degree: u32,
    pub order: i32,
}

impl ShIndex {
    pub fn new(degree: u32, order: i32) -> Result<Self> {
        if order.unsigned_abs() > degree {
            return domain(format!("order {order} outside [-{degree}, {degree}]"));
        }
        Ok(Self { degree, order })
    }

    /// One-based flat index `c² + c + r + 1`.
    pub fn flat(&self) -> usize {
        let c = self.degree as i64;
        (c * c + c + self.order as i64 + 1) as usize
    }
}

/// `k ↦ (c, r)` for one-based flat indices.
pub fn index_to_cr(k: usize) -> Result<ShIndex> {
    if k < 1 {
        return domain("spherical-harmonic index must be at least 1");
    }
    let mut c = ((k - 1) as f64).sqrt().floor() as i64;
    // guard against rounding of the square root for large k
    while c * c > (k - 1) as i64 {
        c -= 1;
    }
    while (c + 1) * (c + 1) <= (k - 1) as i64 {
        c += 1;
    }
    let r = k as i64 - 1 - c * c - c;
    Ok(ShIndex { degree: c as u32, order: r as i32 })
}

/// `(c, r) ↦ k`, validating `|r| ≤ c`.
pub fn cr_to_index(degree: u32, order: i32) -> Result<usize> {
    Ok(ShIndex::new(degree, order)?.flat())
}

/// Highest degree needed for the first `k_count` bases.
pub fn max_degree(k_count: usize) -> u32 {
    if k_count == 0 {
        return 0;
    }
    (k_count as f64).sqrt().ceil() as u32 - 1
}

/// Normalized associated Legendre values `K_c^r P_c^r(x)` for `0 ≤ r ≤ c ≤ c_max`,
/// without Condon–Shortley phase. Entry `(c, r)` lives at `c(c+1)/2 + r`.
///
/// Uses the sectoral seed `P̄_r^r` followed by the upward three-term recurrence in
/// degree, so no factorials are ever formed.
pub fn normalized_legendre(c_max: u32, x: f64) -> Vec<f64> {
    let n = c_max as usize;
    let mut out = vec![0.0; (n + 1) * (n + 2) / 2];
    let at = |c: usize, r: usize| c * (c + 1) / 2 + r;
    let s = (1.0 - x * x).max(0.0).sqrt();

    let mut sectoral = (0.25 / PI).sqrt();
    for r in 0..=n {
        if r > 0 {
            sectoral *= ((2 * r + 1) as f64 / (2 * r) as f64).sqrt() * s;
        }
        out[at(r, r)] = sectoral;
        if r < n {
            out[at(r + 1, r)] = ((2 * r + 3) as f64).sqrt() * x * sectoral;
        }
        for c in r + 2..=n {
            let cf = c as f64;
            let rf = r as f64;
            let a = ((4.0 * cf * cf - 1.0) / (cf * cf - rf * rf)).sqrt();
            let b = (((cf - 1.0) * (cf - 1.0) - rf * rf) / (4.0 * (cf - 1.0) * (cf - 1.0) - 1.0)).sqrt();
            out[at(c, r)] = a * (x * out[at(c - 1, r)] - b * out[at(c - 2, r)]);
        }
    }
    out
}

/// Evaluates the real harmonic `Y_c^r` at `dir`.
pub fn sh_eval(degree: u32, order: i32, dir: SphericalDirection) -> Result<f64> {
    let idx = ShIndex::new(degree, order)?;
    let legendre = normalized_legendre(degree, dir.theta.cos());
    let abs_r = idx.order.unsigned_abs() as usize;
    let c = degree as usize;
    let p = legendre[c * (c + 1) / 2 + abs_r];
    Ok(combine(idx.order, p, dir.phi))
}

#[inline]
fn combine(order: i32, normalized_p: f64, phi: f64) -> f64 {
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    match order {
        0 => normalized_p,
        r if r > 0 => sign * std::f64::consts::SQRT_2 * (r as f64 * phi).cos() * normalized_p,
        r => sign * std::f64::consts::SQRT_2 * ((-r) as f64 * phi).sin() * normalized_p,
    }
}

/// Values of the first `k_count` bases `ω_1 … ω_K` at `dir`.
pub fn basis_values(k_count: usize, dir: SphericalDirection) -> Vec<f64> {
    let mut out = vec![0.0; k_count];
    fill_basis(k_count, dir, &mut out);
    out
}

/// Writes `ω_1 … ω_K` at `dir` into `out[..k_count]`.
pub fn fill_basis(k_count: usize, dir: SphericalDirection, out: &mut [f64]) {
    if k_count == 0 {
        return;
    }
    let c_max = max_degree(k_count);
    let legendre = normalized_legendre(c_max, dir.theta.cos());
    // cos(rφ), sin(rφ) by angle addition
    let (s1, c1) = dir.phi.sin_cos();
    let mut cos_r = vec![1.0; c_max as usize + 1];
    let mut sin_r = vec![0.0; c_max as usize + 1];
    for r in 1..=c_max as usize {
        cos_r[r] = cos_r[r - 1] * c1 - sin_r[r - 1] * s1;
        sin_r[r] = sin_r[r - 1] * c1 + cos_r[r - 1] * s1;
    }
    for (k0, slot) in out.iter_mut().take(k_count).enumerate() {
        let c = ((k0 as f64).sqrt().floor()) as usize;
        let c = if (c + 1) * (c + 1) <= k0 { c + 1 } else { c };
        let r = k0 as i64 - (c * c + c) as i64;
        let abs_r = r.unsigned_abs() as usize;
        let p = legendre[c * (c + 1) / 2 + abs_r];
        let sign = if abs_r.is_multiple_of(2) { 1.0 } else { -1.0 };
        *slot = match r {
            0 => p,
            r if r > 0 => sign * std::f64::consts::SQRT_2 * cos_r[abs_r] * p,
            _ => sign * std::f64::consts::SQRT_2 * sin_r[abs_r] * p,
        };
    }
}

/// Row-major `directions × K` matrix `[Ω]_{i,k} = ω_k(θ_i, φ_i)`.
pub fn basis_matrix(k_count: usize, dirs: &[SphericalDirection]) -> nalgebra::DMatrix<f64> {
    let mut m = nalgebra::DMatrix::zeros(dirs.len(), k_count);
    let mut row = vec![0.0; k_count];
    for (i, d) in dirs.iter().enumerate() {
        fill_basis(k_count, *d, &mut row);
        for (k, v) in row.iter().enumerate() {
            m[(i, k)] = *v;
        }
    }
    m
}
