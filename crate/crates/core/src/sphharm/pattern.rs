use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{basis_values, fill_basis, SphericalDirection};
use crate::error::{domain, io_err, Error, Result};

/// Real weights over the first `K` spherical-harmonic bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCoefficients {
    pub alpha: Vec<f64>,
}

impl PatternCoefficients {
    pub fn new(alpha: Vec<f64>) -> Self {
        Self { alpha }
    }

    /// The unit vector `e_k` (one-based `k`).
    pub fn unit(k_count: usize, k: usize) -> Self {
        let mut alpha = vec![0.0; k_count];
        alpha[k - 1] = 1.0;
        Self { alpha }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn norm(&self) -> f64 {
        self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Rescaled to unit energy, as required of an EM-domain precoder.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) {
            return domain("cannot normalize all-zero pattern coefficients");
        }
        Ok(Self { alpha: self.alpha.iter().map(|a| a / n).collect() })
    }

    /// Pattern gain `Σ α_k ω_k(dir)`.
    pub fn gain(&self, dir: SphericalDirection) -> f64 {
        basis_values(self.k(), dir).iter().zip(&self.alpha).map(|(w, a)| w * a).sum()
    }
}

/// Pattern samples on a set of directions, with the quadrature weights of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPattern {
    pub directions: Vec<SphericalDirection>,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SampledPattern {
    pub fn new(directions: Vec<SphericalDirection>, gains: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if directions.len() != gains.len() || directions.len() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} directions, {} gains, {} weights",
                directions.len(),
                gains.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return domain("quadrature weights must be non-negative");
        }
        Ok(Self { directions, gains, weights })
    }

    /// Same grid, gains replaced by `f` evaluated on each direction.
    pub fn sample(&self, f: impl Fn(SphericalDirection) -> f64) -> Self {
        Self {
            directions: self.directions.clone(),
            gains: self.directions.iter().map(|d| f(*d)).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// `∫ f² dΩ` under the grid measure.
    pub fn energy(&self) -> f64 {
        self.gains.iter().zip(&self.weights).map(|(g, w)| w * g * g).sum()
    }
}

/// Projects a sampled pattern onto the first `k_count` bases:
/// `α_k = ∫ f ω_k dΩ`, evaluated with the grid weights.
///
/// The projection is exact for patterns in the span when the grid has at least
/// `n_theta ≥ 2·c_max + 2` zenith nodes, `c_max = ⌈√K⌉ − 1`.
pub fn project_pattern(pattern: &SampledPattern, k_count: usize) -> Result<PatternCoefficients> {
    if k_count == 0 {
        return domain("truncation K must be at least 1");
    }
    let mut alpha = vec![0.0; k_count];
    let mut row = vec![0.0; k_count];
    for ((d, g), w) in pattern.directions.iter().zip(&pattern.gains).zip(&pattern.weights) {
        let scale = g * w;
        if scale == 0.0 {
            continue;
        }
        fill_basis(k_count, *d, &mut row);
        for (a, b) in alpha.iter_mut().zip(&row) {
            *a += scale * b;
        }
    }
    Ok(PatternCoefficients { alpha })
}

/// Evaluates `f(θ, φ) = Σ α_k ω_k(θ, φ)` on each direction.
pub fn reconstruct_pattern(alpha: &PatternCoefficients, dirs: &[SphericalDirection]) -> Vec<f64> {
    let k = alpha.k();
    let mut row = vec![0.0; k];
    dirs.iter()
        .map(|d| {
            fill_basis(k, *d, &mut row);
            row.iter().zip(&alpha.alpha).map(|(w, a)| w * a).sum()
        })
        .collect()
}

/// `Σ w (f − f̂)² / Σ w f²`.
pub fn pattern_nmse(original: &[f64], reconstructed: &[f64], weights: &[f64]) -> Result<f64> {
    if original.len() != reconstructed.len() || original.len() != weights.len() {
        return Err(Error::Dimension("pattern NMSE inputs differ in length".into()));
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    for ((f, g), w) in original.iter().zip(reconstructed).zip(weights) {
        err += w * (f - g) * (f - g);
        energy += w * f * f;
    }
    if !(energy > 0.0) {
        return domain("reference pattern has zero energy");
    }
    Ok(err / energy)
}

/// Least-squares fit of the first `k_count` coefficients to gains sampled on
/// arbitrary directions, for data that does not come with quadrature weights.
pub fn fit_pattern(dirs: &[SphericalDirection], gains: &[f64], k_count: usize) -> Result<PatternCoefficients> {
    if k_count == 0 {
        return domain("truncation K must be at least 1");
    }
    if dirs.len() != gains.len() {
        return Err(Error::Dimension("directions and gains differ in length".into()));
    }
    if dirs.len() < k_count {
        return Err(Error::RankDeficient(format!("{} samples cannot determine {k_count} coefficients", dirs.len())));
    }
    let basis = super::basis_matrix(k_count, dirs);
    let svd = basis.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!("sample directions do not resolve K = {k_count} bases")));
    }
    let b = nalgebra::DVector::from_column_slice(gains);
    let alpha = svd.solve(&b, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(PatternCoefficients { alpha: alpha.iter().copied().collect() })
}

#[derive(Serialize, Deserialize)]
struct PatternRow {
    theta: f64,
    phi: f64,
    gain: f64,
}

/// Writes `theta,phi,gain` rows (radians) with round-trip precision.
pub fn write_pattern_csv(path: &Path, dirs: &[SphericalDirection], gains: &[f64]) -> Result<()> {
    if dirs.len() != gains.len() {
        return Err(Error::Dimension("directions and gains differ in length".into()));
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for (d, g) in dirs.iter().zip(gains) {
        w.serialize(PatternRow { theta: d.theta, phi: d.phi, gain: *g })
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads rows written by [`write_pattern_csv`].
pub fn read_pattern_csv(path: &Path) -> Result<(Vec<SphericalDirection>, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let mut dirs = Vec::new();
    let mut gains = Vec::new();
    for row in r.deserialize::<PatternRow>() {
        let row = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        dirs.push(SphericalDirection::new(row.theta, row.phi)?);
        gains.push(row.gain);
    }
    Ok((dirs, gains))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::sphharm::{baseline_pattern, grid_for_truncation, quadrature_grid, BaselinePattern};

    #[test]
    fn single_basis_round_trip() {
        let grid = grid_for_truncation(25).unwrap();
        let pattern = grid.sample(|d| basis_values(5, d)[4]);
        let alpha = project_pattern(&pattern, 25).unwrap();
        for (k, a) in alpha.alpha.iter().enumerate() {
            let want = if k == 4 { 1.0 } else { 0.0 };
            assert!((a - want).abs() < 1e-8, "alpha_{} = {a}", k + 1);
        }
    }

    #[test]
    fn isotropic_unit_gain_projects_to_two_root_pi() {
        let grid = quadrature_grid(8, 16).unwrap();
        let alpha = project_pattern(&grid.sample(|_| 1.0), 1).unwrap();
        assert!((alpha.alpha[0] - 2.0 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_first_basis_and_zero() {
        let dirs = quadrature_grid(4, 6).unwrap().directions;
        let gains = reconstruct_pattern(&PatternCoefficients::unit(9, 1), &dirs);
        assert!(gains.iter().all(|g| (g - 0.5 / PI.sqrt()).abs() < 1e-15));
        let zero = reconstruct_pattern(&PatternCoefficients::new(vec![0.0; 9]), &dirs);
        assert!(zero.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn nmse_edge_cases() {
        let w = [1.0, 2.0, 3.0];
        let f = [1.0, -1.0, 0.5];
        assert_eq!(pattern_nmse(&f, &f, &w).unwrap(), 0.0);
        assert!((pattern_nmse(&f, &[0.0; 3], &w).unwrap() - 1.0).abs() < 1e-15);
        assert!(pattern_nmse(&[0.0; 3], &f, &w).is_err());
        assert!(pattern_nmse(&f, &f[..2], &w).is_err());
    }

    #[test]
    fn dipole_truncation_error_shrinks() {
        let grid = quadrature_grid(64, 128).unwrap();
        let dipole = grid.sample(|d| baseline_pattern(BaselinePattern::Dipole, d));
        let mut last = f64::INFINITY;
        for k in [25, 100, 225] {
            let alpha = project_pattern(&dipole, k).unwrap();
            let rec = reconstruct_pattern(&alpha, &dipole.directions);
            let nmse = pattern_nmse(&dipole.gains, &rec, &dipole.weights).unwrap();
            assert!(nmse < last, "K={k}: {nmse} !< {last}");
            last = nmse;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn least_squares_fit_recovers_in_span_pattern() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let truth = PatternCoefficients::new((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let dirs: Vec<SphericalDirection> = (0..60)
            .map(|_| SphericalDirection::new(rng.random_range(0.0..PI), rng.random_range(-PI..PI)).unwrap())
            .collect();
        let gains = reconstruct_pattern(&truth, &dirs);
        let fit = fit_pattern(&dirs, &gains, 16).unwrap();
        for (a, b) in fit.alpha.iter().zip(&truth.alpha) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(matches!(fit_pattern(&dirs[..10], &gains[..10], 16), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn zero_truncation_is_rejected() {
        let grid = quadrature_grid(4, 4).unwrap();
        assert!(project_pattern(&grid, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let grid = quadrature_grid(5, 6).unwrap();
        let p = grid.sample(|d| d.theta.sin() * (3.0 * d.phi).cos() / 7.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_pattern_csv(&path, &p.directions, &p.gains).unwrap();
        let (dirs, gains) = read_pattern_csv(&path).unwrap();
        assert_eq!(dirs, p.directions);
        assert_eq!(gains, p.gains);
    }
}
