//! Angle-domain stage: 2D-ESPRIT with automatic pairing, the AD-OMP baseline,
//! and the least-squares equivalent gains that complete the eCSI.

use std::f64::consts::PI;

use crate::channel::{steering_phasor, ArrayGeometry, UeEcsi};
use crate::error::{domain, Error, Result};
use crate::linalg::{eig_general, least_squares, signal_subspace, CMat, RMat, RVec, C64};
use crate::sphharm::SphericalDirection;

use super::delay::somp;

/// Leakage above which the pairing is reported as ambiguous.
const LEAKAGE_LIMIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    /// Phase progression per element along y and z, radians.
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub directions: Vec<SphericalDirection>,
    /// Paths whose arccos/arcsin argument had to be clipped.
    pub clamped: usize,
    /// Relative off-diagonal energy left after pairing (0 for grid methods).
    pub leakage: f64,
    pub ambiguous: bool,
}

/// `[B]_{i,m}`: steering phasor of path `i` at antenna `m` (`L × M`).
pub fn steering_matrix(geom: &ArrayGeometry, dirs: &[SphericalDirection]) -> CMat {
    CMat::from_fn(dirs.len(), geom.antennas(), |i, m| steering_phasor(geom, dirs[i], m))
}

/// Inverts `(μ, ν) = (s·sinθ sinφ, −s·cosθ)`, `s = 2πd/λ`, on the front half-space
/// `φ ∈ [−π/2, π/2]`. Returns the direction and whether an argument was clipped.
pub fn angles_from_frequencies(geom: &ArrayGeometry, mu: f64, nu: f64) -> (SphericalDirection, bool) {
    let s = geom.phase_scale();
    let c = -nu / s;
    let mut clamped = !(-1.0..=1.0).contains(&c);
    let theta = c.clamp(-1.0, 1.0).acos();
    let radius = s * theta.sin();
    let phi = if radius > 0.0 {
        let arg = mu / radius;
        clamped |= !(-1.0..=1.0).contains(&arg);
        arg.clamp(-1.0, 1.0).asin()
    } else {
        0.0
    };
    (SphericalDirection { theta, phi }, clamped)
}

fn select_rows(a: &CMat, rows: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), a.ncols(), |r, c| a[(rows[r], c)])
}

/// Diagonalizes `pivot` and reads both rotations in its eigenbasis.
/// Returns `(diag Φ_y, diag Φ_z, leakage)`.
fn pair(pivot: &CMat, phi_y: &CMat, phi_z: &CMat) -> Result<(Vec<C64>, Vec<C64>, f64)> {
    let (_, v) = eig_general(pivot)?;
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("pairing eigenbasis is singular".into()))?;
    let dy = &vinv * phi_y * &v;
    let dz = &vinv * phi_z * &v;
    let leak = |d: &CMat| {
        let diag: f64 = (0..d.nrows()).map(|i| d[(i, i)].norm_sqr()).sum();
        let off = d.iter().map(|z| z.norm_sqr()).sum::<f64>() - diag;
        (off.max(0.0) / diag.max(f64::MIN_POSITIVE)).sqrt()
    };
    let leakage = leak(&dy).max(leak(&dz));
    let n = dy.nrows();
    Ok(((0..n).map(|i| dy[(i, i)]).collect(), (0..n).map(|i| dz[(i, i)]).collect(), leakage))
}

/// Paired `(μ, ν)` from an `M × N` snapshot matrix of the planar array.
///
/// Both shift invariances are solved from one signal subspace. The y-rotation
/// is diagonalized and its eigenbasis applied to the z-rotation; if that leaves
/// more than 10 % off-diagonal energy (e.g. two paths share `μ`), a fixed linear
/// combination of both rotations is diagonalized instead and the better of the
/// two pairings kept.
pub fn esprit_2d(y: &CMat, geom: &ArrayGeometry, order: usize) -> Result<AngleEstimate> {
    let (my, mz) = (geom.m_y, geom.m_z);
    if my < 2 || mz < 2 {
        return domain("2D-ESPRIT needs at least two elements along y and z");
    }
    if y.nrows() != geom.antennas() {
        return Err(Error::Dimension(format!("{} rows for {} antennas", y.nrows(), geom.antennas())));
    }
    let max_order = ((my - 1) * mz).min(my * (mz - 1));
    if order == 0 || order > max_order || y.ncols() < order {
        return domain(format!("2D-ESPRIT order {order} outside [1, {max_order}] or too few snapshots"));
    }
    let us = signal_subspace(y, order)?;
    let y_lo: Vec<usize> = (0..my - 1).flat_map(|a| (0..mz).map(move |b| geom.index(a, b))).collect();
    let y_hi: Vec<usize> = (1..my).flat_map(|a| (0..mz).map(move |b| geom.index(a, b))).collect();
    let z_lo: Vec<usize> = (0..my).flat_map(|a| (0..mz - 1).map(move |b| geom.index(a, b))).collect();
    let z_hi: Vec<usize> = (0..my).flat_map(|a| (1..mz).map(move |b| geom.index(a, b))).collect();
    let phi_y = least_squares(&select_rows(&us, &y_lo), &select_rows(&us, &y_hi), 1e16)?;
    let phi_z = least_squares(&select_rows(&us, &z_lo), &select_rows(&us, &z_hi), 1e16)?;

    let mut best = pair(&phi_y, &phi_y, &phi_z)?;
    if best.2 > LEAKAGE_LIMIT {
        let mixed = &phi_y + &phi_z * C64::new(0.7, 0.0);
        let alt = pair(&mixed, &phi_y, &phi_z)?;
        if alt.2 < best.2 {
            best = alt;
        }
    }
    let (ly, lz, leakage) = best;
    let mut est = AngleEstimate {
        mu: Vec::with_capacity(order),
        nu: Vec::with_capacity(order),
        directions: Vec::with_capacity(order),
        clamped: 0,
        leakage,
        ambiguous: leakage > LEAKAGE_LIMIT,
    };
    for (a, b) in ly.iter().zip(&lz) {
        push_frequencies(&mut est, geom, -a.arg(), -b.arg());
    }
    Ok(est)
}

fn push_frequencies(est: &mut AngleEstimate, geom: &ArrayGeometry, mu: f64, nu: f64) {
    let (dir, clamped) = angles_from_frequencies(geom, mu, nu);
    est.mu.push(mu);
    est.nu.push(nu);
    est.directions.push(dir);
    est.clamped += clamped as usize;
}

/// Simultaneous OMP over planar-array atoms `e^{−j(m_y μ + m_z ν)}` on an
/// `oversampling·M_y × oversampling·M_z` grid of `[−π, π)²`, restricted to the
/// visible region `μ² + ν² ≤ (2πd/λ)²`.
pub fn ad_omp(y: &CMat, geom: &ArrayGeometry, oversampling: usize, sparsity: usize) -> Result<AngleEstimate> {
    if oversampling == 0 {
        return domain("dictionary oversampling must be at least 1");
    }
    if y.nrows() != geom.antennas() {
        return Err(Error::Dimension(format!("{} rows for {} antennas", y.nrows(), geom.antennas())));
    }
    if sparsity == 0 || sparsity > geom.antennas() {
        return domain(format!("sparsity {sparsity} must lie in [1, M = {}]", geom.antennas()));
    }
    let s2 = geom.phase_scale().powi(2) * (1.0 + 1e-12);
    let (ny, nz) = (oversampling * geom.m_y, oversampling * geom.m_z);
    let grid: Vec<(f64, f64)> = (0..ny)
        .flat_map(|a| (0..nz).map(move |b| (-PI + 2.0 * PI * a as f64 / ny as f64, -PI + 2.0 * PI * b as f64 / nz as f64)))
        .filter(|(mu, nu)| mu * mu + nu * nu <= s2)
        .collect();
    let dict = CMat::from_fn(geom.antennas(), grid.len(), |m, n| {
        let (a, b) = geom.coords(m);
        let (mu, nu) = grid[n];
        crate::linalg::cis(-(a as f64 * mu + b as f64 * nu))
    });
    let support = somp(&dict, y, sparsity)?;
    let mut est = AngleEstimate {
        mu: Vec::new(),
        nu: Vec::new(),
        directions: Vec::new(),
        clamped: 0,
        leakage: 0.0,
        ambiguous: false,
    };
    for n in support {
        push_frequencies(&mut est, geom, grid[n].0, grid[n].1);
    }
    Ok(est)
}

/// Per-subcarrier equivalent path gains `r̂_g` (`L × G`).
///
/// Stacks the `M·T` sCSI estimates of each subcarrier (`scsi[t]` is `G × M`)
/// against `[Υ]_{(t,m), i} = [B]_{i,m}·(Ω α^{(t)})_i` and solves by least squares.
pub fn ls_equivalent_gain(scsi: &[CMat], steering: &CMat, omega: &RMat, patterns: &[RVec]) -> Result<CMat> {
    let (l, m) = (steering.nrows(), steering.ncols());
    let t = patterns.len();
    if scsi.len() != t || omega.nrows() != l {
        return Err(Error::Dimension("sCSI, patterns, steering and Ω disagree".into()));
    }
    if m * t <= l {
        return Err(Error::RankDeficient(format!(
            "M·T = {} observations cannot resolve {l} paths; add time symbols",
            m * t
        )));
    }
    let g = scsi.first().map(|s| s.nrows()).unwrap_or(0);
    if scsi.iter().any(|s| s.ncols() != m || s.nrows() != g) {
        return Err(Error::Dimension("sCSI blocks must all be G × M".into()));
    }
    let projected: Vec<RVec> = patterns.iter().map(|a| omega * a).collect();
    let upsilon = CMat::from_fn(m * t, l, |row, i| steering[(i, row % m)] * projected[row / m][i]);
    let rhs = CMat::from_fn(m * t, g, |row, gg| scsi[row / m][(gg, row % m)]);
    least_squares(&upsilon, &rhs, 1e10).map_err(|e| match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!("{msg}; vary the receive-pattern schedule or add time symbols")),
        other => other,
    })
}

/// `Z_g[i, m] = [B]_{i,m}·r̂_{g,i}` with basis matrix `Ω̂`.
pub fn reconstruct_ecsi(r: &CMat, steering: &CMat, omega: &RMat) -> Result<UeEcsi> {
    if r.nrows() != steering.nrows() || omega.nrows() != steering.nrows() {
        return Err(Error::Dimension("gain, steering and Ω path counts differ".into()));
    }
    let z = (0..r.ncols())
        .map(|g| CMat::from_fn(steering.nrows(), steering.ncols(), |i, m| steering[(i, m)] * r[(i, g)]))
        .collect();
    UeEcsi::new(omega.clone(), z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_cost_assignment;
    use crate::sphharm::basis_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn snapshots(geom: &ArrayGeometry, dirs: &[SphericalDirection], n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = CMat::from_fn(dirs.len(), n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        steering_matrix(geom, dirs).transpose() * s
    }

    fn deg(t: f64, p: f64) -> SphericalDirection {
        SphericalDirection::from_degrees(t, p).unwrap()
    }

    fn matched(est: &[SphericalDirection], truth: &[SphericalDirection]) -> f64 {
        let cost: Vec<Vec<f64>> = est
            .iter()
            .map(|a| truth.iter().map(|b| (a.theta - b.theta).abs().max((a.phi - b.phi).abs())).collect())
            .collect();
        min_cost_assignment(&cost).iter().map(|&(i, j)| cost[i][j]).fold(0.0, f64::max)
    }

    #[test]
    fn shift_ratios_are_the_spatial_frequencies() {
        let geom = ArrayGeometry::half_wavelength(3, 3).unwrap();
        let d = deg(70.0, 25.0);
        let (mu, nu) = geom.spatial_frequencies(d);
        let y = steering_phasor(&geom, d, geom.index(1, 0)) / steering_phasor(&geom, d, geom.index(0, 0));
        let z = steering_phasor(&geom, d, geom.index(0, 1)) / steering_phasor(&geom, d, geom.index(0, 0));
        assert!((y - crate::linalg::cis(-mu)).norm() < 1e-12);
        assert!((z - crate::linalg::cis(-nu)).norm() < 1e-12);
        let (back, clamped) = angles_from_frequencies(&geom, mu, nu);
        assert!(!clamped && (back.theta - d.theta).abs() < 1e-12 && (back.phi - d.phi).abs() < 1e-12);
    }

    #[test]
    fn single_path_is_exact() {
        let geom = ArrayGeometry::half_wavelength(6, 6).unwrap();
        let d = deg(80.0, 30.0);
        let est = esprit_2d(&snapshots(&geom, &[d], 10, 1), &geom, 1).unwrap();
        assert!((est.directions[0].theta - d.theta).abs() < 1e-8);
        assert!((est.directions[0].phi - d.phi).abs() < 1e-8);
    }

    #[test]
    fn broadside_has_zero_frequencies() {
        let geom = ArrayGeometry::half_wavelength(4, 4).unwrap();
        let est = esprit_2d(&snapshots(&geom, &[deg(90.0, 0.0)], 4, 2), &geom, 1).unwrap();
        assert!(est.mu[0].abs() < 1e-12 && est.nu[0].abs() < 1e-12);
    }

    #[test]
    fn six_paths_pair_correctly() {
        let geom = ArrayGeometry::half_wavelength(6, 6).unwrap();
        let truth = [deg(70.0, -40.0), deg(95.0, 10.0), deg(120.0, 35.0), deg(85.0, 50.0), deg(140.0, -15.0), deg(105.0, -55.0)];
        let est = esprit_2d(&snapshots(&geom, &truth, 72, 3), &geom, 6).unwrap();
        assert!(!est.ambiguous && est.clamped == 0);
        assert!(matched(&est.directions, &truth) < 1e-6);
    }

    #[test]
    fn shared_mu_falls_back_to_mixed_pairing() {
        let geom = ArrayGeometry::half_wavelength(5, 5).unwrap();
        let s = geom.phase_scale();
        let truth: Vec<_> = [(0.4, -0.9), (0.4, 0.6)].iter().map(|&(mu, nu)| angles_from_frequencies(&geom, mu * s, nu * s).0).collect();
        let est = esprit_2d(&snapshots(&geom, &truth, 20, 4), &geom, 2).unwrap();
        assert!(matched(&est.directions, &truth) < 1e-6);
    }

    #[test]
    fn preconditions() {
        let line = ArrayGeometry::half_wavelength(1, 8).unwrap();
        assert!(esprit_2d(&CMat::zeros(8, 4), &line, 1).is_err());
        let geom = ArrayGeometry::half_wavelength(3, 3).unwrap();
        assert!(esprit_2d(&snapshots(&geom, &[deg(80.0, 0.0)], 10, 1), &geom, 7).is_err());
    }

    #[test]
    fn out_of_domain_frequencies_are_clamped() {
        let geom = ArrayGeometry::half_wavelength(4, 4).unwrap();
        let (d, clamped) = angles_from_frequencies(&geom, 3.0, 2.0);
        assert!(clamped);
        assert!((d.phi - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn omp_on_grid_angle_is_exact() {
        let geom = ArrayGeometry::half_wavelength(6, 6).unwrap();
        let d = angles_from_frequencies(&geom, 0.0, -PI / 2.0).0;
        let est = ad_omp(&snapshots(&geom, &[d], 6, 5), &geom, 4, 1).unwrap();
        assert!(est.mu[0].abs() < 1e-15 && (est.nu[0] + PI / 2.0).abs() < 1e-15);
        assert!((est.directions[0].theta - d.theta).abs() < 1e-12);
    }

    #[test]
    fn omp_off_grid_error_is_bounded_by_grid() {
        let geom = ArrayGeometry::half_wavelength(6, 6).unwrap();
        let d = deg(83.0, 21.0);
        let est = ad_omp(&snapshots(&geom, &[d], 6, 6), &geom, 4, 1).unwrap();
        let (mu, nu) = geom.spatial_frequencies(d);
        let cell = 2.0 * PI / 24.0;
        assert!((est.mu[0] - mu).abs() <= cell && (est.nu[0] - nu).abs() <= cell);
        let esp = esprit_2d(&snapshots(&geom, &[d], 6, 6), &geom, 1).unwrap();
        assert!((esp.mu[0] - mu).abs() < 1e-10 && (esp.mu[0] - mu).abs() < (est.mu[0] - mu).abs());
    }

    #[test]
    fn equivalent_gain_scalar_case() {
        let geom = ArrayGeometry::half_wavelength(2, 2).unwrap();
        let dirs = [deg(75.0, 20.0)];
        let b = steering_matrix(&geom, &dirs);
        let omega = basis_matrix(4, &dirs);
        let patterns = vec![RVec::from_vec(vec![1.0, 0.0, 0.0, 0.0])];
        let h = CMat::from_fn(3, 4, |g, m| C64::new(g as f64 + 1.0, m as f64));
        let r = ls_equivalent_gain(std::slice::from_ref(&h), &b, &omega, &patterns).unwrap();
        let ups = CMat::from_fn(4, 1, |m, _| b[(0, m)] * (&omega * &patterns[0])[0]);
        for g in 0..3 {
            let col = h.row(g).transpose();
            let want = (ups.adjoint() * col)[0] / ups.norm_squared();
            assert!((r[(0, g)] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn too_few_observations_error() {
        let geom = ArrayGeometry::half_wavelength(2, 1).unwrap();
        let dirs = [deg(75.0, 20.0), deg(100.0, -30.0)];
        let b = steering_matrix(&geom, &dirs);
        let omega = basis_matrix(4, &dirs);
        let p = vec![RVec::from_vec(vec![1.0, 0.0, 0.0, 0.0])];
        assert!(matches!(ls_equivalent_gain(&[CMat::zeros(3, 2)], &b, &omega, &p), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn reconstruction_identity_and_zero() {
        let geom = ArrayGeometry::half_wavelength(2, 3).unwrap();
        let dirs = [deg(75.0, 20.0), deg(100.0, -30.0)];
        let b = steering_matrix(&geom, &dirs);
        let omega = basis_matrix(9, &dirs);
        let r = CMat::from_fn(2, 4, |i, g| C64::new(i as f64 - 0.5, g as f64));
        let e = reconstruct_ecsi(&r, &b, &omega).unwrap();
        assert_eq!(e.z[3][(1, 4)], b[(1, 4)] * r[(1, 3)]);
        let zero = reconstruct_ecsi(&CMat::zeros(2, 4), &b, &omega).unwrap();
        assert_eq!(zero.energy(), 0.0);
    }
}
