use super::{steering_phasor, ArrayGeometry, UeChannelSpec, RX_ISOTROPIC_GAIN};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMat, CVec, RMat, C64};
use crate::precoder::EmPrecoder;
use crate::sphharm::{basis_matrix, SphericalDirection};

/// EM-domain channel of one user over all antennas and subcarriers, kept in its
/// path-factored form `Q_g = Ωᵀ Z_g`.
///
/// `Ω` is `L × K` with `[Ω]_{i,k} = ω_k(θ_i, φ_i)`; `Z_g` is `L × M` with
/// `[Z_g]_{i,m} = [B_m]_{i,i}·(f_rxᵀ A Σ_g)_i`. Column `m` of `Q_g` is `q*_{m,g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UeEcsi {
    pub omega: RMat,
    pub z: Vec<CMat>,
}

impl UeEcsi {
    pub fn new(omega: RMat, z: Vec<CMat>) -> Result<Self> {
        let l = omega.nrows();
        if let Some(bad) = z.iter().find(|zg| zg.nrows() != l) {
            return Err(Error::Dimension(format!("Ω has {l} paths but Z_g has {}", bad.nrows())));
        }
        let m = z.first().map(|zg| zg.ncols()).unwrap_or(0);
        if z.iter().any(|zg| zg.ncols() != m) {
            return Err(Error::Dimension("Z_g matrices disagree on antenna count".into()));
        }
        Ok(Self { omega, z })
    }

    pub fn paths(&self) -> usize {
        self.omega.nrows()
    }

    pub fn k(&self) -> usize {
        self.omega.ncols()
    }

    pub fn antennas(&self) -> usize {
        self.z.first().map(|z| z.ncols()).unwrap_or(0)
    }

    pub fn subcarriers(&self) -> usize {
        self.z.len()
    }

    /// `q_{m,g}` as a K-vector.
    pub fn q(&self, m: usize, g: usize) -> CVec {
        let zc = self.z[g].column(m).map(|v| v.conj());
        self.omega.transpose().map(C64::from) * zc
    }

    /// Dense `Q_g` (`K × M`), columns `q*_{m,g}`.
    pub fn q_matrix(&self, g: usize) -> CMat {
        self.omega.transpose().map(C64::from) * &self.z[g]
    }

    /// `Ω α_m` for every antenna (`L × M`).
    pub fn project(&self, em: &EmPrecoder) -> RMat {
        let m = self.antennas();
        match em {
            EmPrecoder::Single(alpha) => {
                let p = &self.omega * alpha;
                RMat::from_fn(p.len(), m, |i, _| p[i])
            }
            EmPrecoder::Multi(lambda) => &self.omega * lambda,
        }
    }

    /// Spatial channel row `[h_{1,g}, …, h_{M,g}]` given `Ω α_m` from [`Self::project`].
    pub fn effective_row(&self, g: usize, projected: &RMat) -> CVec {
        let z = &self.z[g];
        CVec::from_fn(z.ncols(), |m, _| {
            (0..z.nrows()).map(|i| z[(i, m)] * projected[(i, m)]).sum()
        })
    }

    /// `Σ_{m,g} |q_{m,g}|²`.
    pub fn energy(&self) -> f64 {
        let gram = &self.omega * self.omega.transpose();
        self.z
            .iter()
            .map(|zg| quad_form_sum(zg, &gram, zg))
            .sum()
    }

    /// `Σ_{m,g} |q̂_{m,g} − q_{m,g}|²` without forming the K-vectors.
    pub fn distance_sq(&self, other: &UeEcsi) -> Result<f64> {
        if self.k() != other.k() || self.subcarriers() != other.subcarriers() || self.antennas() != other.antennas() {
            return Err(Error::Dimension("eCSI tensors differ in shape".into()));
        }
        let g_aa = &self.omega * self.omega.transpose();
        let g_bb = &other.omega * other.omega.transpose();
        let g_ab = &self.omega * other.omega.transpose();
        let mut total = 0.0;
        for (za, zb) in self.z.iter().zip(&other.z) {
            total += quad_form_sum(za, &g_aa, za) + quad_form_sum(zb, &g_bb, zb) - 2.0 * quad_form_sum(za, &g_ab, zb);
        }
        Ok(total.max(0.0))
    }
}

/// `Re Σ_m z_a[:,m]ᴴ G z_b[:,m]` for real `G`.
fn quad_form_sum(za: &CMat, gram: &RMat, zb: &CMat) -> f64 {
    let gz = gram.map(C64::from) * zb;
    za.iter().zip(gz.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// eCSI for all users.
#[derive(Debug, Clone, PartialEq)]
pub struct EcsiTensor {
    pub users: Vec<UeEcsi>,
}

impl EcsiTensor {
    pub fn new(users: Vec<UeEcsi>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Dimension("eCSI needs at least one user".into()));
        }
        let (k, m, g) = (users[0].k(), users[0].antennas(), users[0].subcarriers());
        if users.iter().any(|u| u.k() != k || u.antennas() != m || u.subcarriers() != g) {
            return Err(Error::Dimension("users disagree on K, M or G".into()));
        }
        Ok(Self { users })
    }

    pub fn k(&self) -> usize {
        self.users[0].k()
    }

    pub fn antennas(&self) -> usize {
        self.users[0].antennas()
    }

    pub fn subcarriers(&self) -> usize {
        self.users[0].subcarriers()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// sCSI through the factored form.
    pub fn scsi(&self, em: &EmPrecoder) -> ScsiTensor {
        let mut out = ScsiTensor::zeros(self.num_users(), self.antennas(), self.subcarriers());
        for (u, ue) in self.users.iter().enumerate() {
            let p = ue.project(em);
            for g in 0..ue.subcarriers() {
                let row = ue.effective_row(g, &p);
                for (m, h) in row.iter().enumerate() {
                    out.set(u, m, g, *h);
                }
            }
        }
        out
    }
}

/// Spatial channel `h_{u,m,g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScsiTensor {
    pub users: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    data: Vec<C64>,
}

impl ScsiTensor {
    pub fn zeros(users: usize, antennas: usize, subcarriers: usize) -> Self {
        Self { users, antennas, subcarriers, data: vec![C64::new(0.0, 0.0); users * antennas * subcarriers] }
    }

    #[inline]
    fn at(&self, u: usize, m: usize, g: usize) -> usize {
        (u * self.subcarriers + g) * self.antennas + m
    }

    pub fn get(&self, u: usize, m: usize, g: usize) -> C64 {
        self.data[self.at(u, m, g)]
    }

    pub fn set(&mut self, u: usize, m: usize, g: usize, v: C64) {
        let i = self.at(u, m, g);
        self.data[i] = v;
    }

    /// `[h_{u,1,g} … h_{u,M,g}]`.
    pub fn row(&self, u: usize, g: usize) -> CVec {
        let start = self.at(u, 0, g);
        CVec::from_column_slice(&self.data[start..start + self.antennas])
    }

    pub fn values(&self) -> &[C64] {
        &self.data
    }
}

/// eCSI of one user on the given subcarrier frequencies (Hz).
pub fn build_ecsi(spec: &UeChannelSpec, geom: &ArrayGeometry, k: usize, freqs: &[f64]) -> Result<UeEcsi> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    let omega = basis_matrix(k, &spec.aods());
    let m = geom.antennas();
    let l = spec.num_paths();
    let arrival = spec.arrival_phasors(geom.wavelength);
    let steering = CMat::from_fn(l, m, |i, mm| steering_phasor(geom, spec.paths[i].aod, mm));
    let z = freqs
        .iter()
        .map(|&f| {
            CMat::from_fn(l, m, |i, mm| {
                let p = &spec.paths[i];
                let sigma = p.gain * cis(-2.0 * std::f64::consts::PI * p.delay * f);
                steering[(i, mm)] * RX_ISOTROPIC_GAIN * arrival[i] * sigma
            })
        })
        .collect();
    UeEcsi::new(omega, z)
}

/// sCSI from dense eCSI: `h_{u,m,g} = q_{u,m,g}ᴴ α_m`.
pub fn scsi_from_ecsi(ecsi: &EcsiTensor, em: &EmPrecoder) -> Result<ScsiTensor> {
    if em.k() != ecsi.k() {
        return Err(Error::Dimension(format!("α has length {} but eCSI has K = {}", em.k(), ecsi.k())));
    }
    if let EmPrecoder::Multi(l) = em {
        if l.ncols() != ecsi.antennas() {
            return Err(Error::Dimension(format!("{} antenna patterns for {} antennas", l.ncols(), ecsi.antennas())));
        }
    }
    let mut out = ScsiTensor::zeros(ecsi.num_users(), ecsi.antennas(), ecsi.subcarriers());
    for (u, ue) in ecsi.users.iter().enumerate() {
        for g in 0..ue.subcarriers() {
            for m in 0..ue.antennas() {
                let q = ue.q(m, g);
                let alpha = em.alpha(m);
                let h: C64 = q.iter().zip(alpha.iter()).map(|(q, a)| q.conj() * *a).sum();
                out.set(u, m, g, h);
            }
        }
    }
    Ok(out)
}

/// Literal multipath sum for one user at one frequency:
/// `h_m = Σ_i x̃_i f_rx f_tx,m(θ_i, φ_i) e^{−j2π/λ(k_txᵀp_m + k_rxᵀq)} e^{−j2πτ_i f}`.
pub fn scsi_direct(
    spec: &UeChannelSpec,
    geom: &ArrayGeometry,
    pattern: impl Fn(usize, SphericalDirection) -> f64,
    freq: f64,
) -> Vec<C64> {
    let arrival = spec.arrival_phasors(geom.wavelength);
    (0..geom.antennas())
        .map(|m| {
            spec.paths
                .iter()
                .zip(&arrival)
                .map(|(p, a)| {
                    p.gain
                        * RX_ISOTROPIC_GAIN
                        * pattern(m, p.aod)
                        * steering_phasor(geom, p.aod, m)
                        * *a
                        * cis(-2.0 * std::f64::consts::PI * p.delay * freq)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::channel::{generate_paths, Path, PathStatistics, SystemConfig};
    use crate::linalg::RVec;
    use crate::sphharm::{basis_values, PatternCoefficients};

    fn single_path() -> UeChannelSpec {
        UeChannelSpec::new(vec![Path {
            gain: C64::new(1.0, 0.0),
            delay: 0.0,
            aod: SphericalDirection::new(1.2, 0.4).unwrap(),
            aoa: SphericalDirection::new(0.5, 0.1).unwrap(),
        }])
        .unwrap()
    }

    #[test]
    fn single_path_closed_form() {
        let geom = ArrayGeometry::half_wavelength(2, 3).unwrap();
        let spec = single_path();
        let ue = build_ecsi(&spec, &geom, 9, &[1e6]).unwrap();
        let row = basis_values(9, spec.paths[0].aod);
        for m in 0..6 {
            let q = ue.q(m, 0);
            let phase = steering_phasor(&geom, spec.paths[0].aod, m) * RX_ISOTROPIC_GAIN;
            for k in 0..9 {
                assert!((q[k] - (phase * row[k]).conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn direct_sum_with_unit_pattern_is_the_steering_vector() {
        let geom = ArrayGeometry::half_wavelength(3, 3).unwrap();
        let spec = single_path();
        let h = scsi_direct(&spec, &geom, |_, _| 1.0 / RX_ISOTROPIC_GAIN, 0.0);
        for (m, hm) in h.iter().enumerate() {
            assert!((hm - steering_phasor(&geom, spec.paths[0].aod, m)).norm() < 1e-14);
        }
        let doubled = scsi_direct(&spec, &geom, |_, _| 2.0 / RX_ISOTROPIC_GAIN, 0.0);
        for (a, b) in h.iter().zip(&doubled) {
            assert!((b - a * 2.0).norm() < 1e-14);
        }
    }

    #[test]
    fn ecsi_is_linear_in_path_gains() {
        let geom = ArrayGeometry::half_wavelength(2, 2).unwrap();
        let spec = generate_paths(4, &PathStatistics::default(), 1).unwrap().remove(0);
        let mut scaled = spec.clone();
        for p in &mut scaled.paths {
            p.gain *= 2.0;
        }
        let a = build_ecsi(&spec, &geom, 16, &[1e6, 2e6]).unwrap();
        let b = build_ecsi(&scaled, &geom, 16, &[1e6, 2e6]).unwrap();
        assert!((b.q_matrix(1) - a.q_matrix(1) * C64::from(2.0)).norm() < 1e-12);
    }

    #[test]
    fn in_span_patterns_agree_across_routes() {
        let geom = ArrayGeometry::half_wavelength(3, 2).unwrap();
        let sys = SystemConfig::new(16, 30e3, 2, 1.0).unwrap();
        let specs = generate_paths(11, &PathStatistics::default(), 2).unwrap();
        let k = 25;
        let freqs = sys.frequencies();
        let ecsi = EcsiTensor::new(specs.iter().map(|s| build_ecsi(s, &geom, k, &freqs).unwrap()).collect()).unwrap();
        // different in-span pattern per antenna
        let lambda = RMat::from_fn(k, 6, |kk, m| ((kk * 7 + m * 3) as f64).sin());
        let lambda = RMat::from_columns(&lambda.column_iter().map(|c| c.normalize()).collect::<Vec<_>>());
        let em = EmPrecoder::Multi(lambda.clone());
        let dense = scsi_from_ecsi(&ecsi, &em).unwrap();
        let fast = ecsi.scsi(&em);
        let mut worst = 0.0f64;
        let mut peak = 0.0f64;
        for (u, spec) in specs.iter().enumerate() {
            for g in 0..16 {
                let direct = scsi_direct(
                    spec,
                    &geom,
                    |m, d| PatternCoefficients::new(lambda.column(m).iter().copied().collect()).gain(d),
                    freqs[g],
                );
                for m in 0..6 {
                    peak = peak.max(direct[m].norm());
                    worst = worst.max((direct[m] - dense.get(u, m, g)).norm());
                    worst = worst.max((direct[m] - fast.get(u, m, g)).norm());
                }
            }
        }
        assert!(worst / peak < 1e-10, "relative mismatch {}", worst / peak);
    }

    #[test]
    fn zero_and_isotropic_patterns() {
        let geom = ArrayGeometry::half_wavelength(2, 2).unwrap();
        let spec = single_path();
        let ecsi = EcsiTensor::new(vec![build_ecsi(&spec, &geom, 4, &[5e5]).unwrap()]).unwrap();
        let zero = scsi_from_ecsi(&ecsi, &EmPrecoder::Single(RVec::zeros(4))).unwrap();
        assert!(zero.values().iter().all(|h| h.norm() == 0.0));
        let iso = scsi_from_ecsi(&ecsi, &EmPrecoder::Single(RVec::from_vec(vec![1.0, 0.0, 0.0, 0.0]))).unwrap();
        let mags: Vec<f64> = (0..4).map(|m| iso.get(0, m, 0).norm()).collect();
        assert!(mags.iter().all(|x| (x - mags[0]).abs() < 1e-14));
        let bad = EmPrecoder::Single(RVec::zeros(3));
        assert!(scsi_from_ecsi(&ecsi, &bad).is_err());
    }

    #[test]
    fn frequency_response_is_a_sum_of_path_exponentials() {
        let geom = ArrayGeometry::half_wavelength(2, 2).unwrap();
        let sys = SystemConfig::new(64, 1e6, 1, 1.0).unwrap();
        let spec = generate_paths(5, &PathStatistics::default(), 1).unwrap().remove(0);
        let freqs = sys.frequencies();
        let ue = build_ecsi(&spec, &geom, 9, &freqs).unwrap();
        let em = EmPrecoder::Single(RVec::from_fn(9, |k, _| 1.0 / (k as f64 + 1.0)).normalize());
        let ecsi = EcsiTensor::new(vec![ue]).unwrap();
        let h = ecsi.scsi(&em);
        let basis = CMat::from_fn(64, spec.num_paths(), |g, i| cis(-2.0 * PI * spec.paths[i].delay * freqs[g]));
        for m in 0..4 {
            let y = CMat::from_fn(64, 1, |g, _| h.get(0, m, g));
            let x = crate::linalg::least_squares(&basis, &y, 1e16).unwrap();
            let resid = (&basis * x - &y).norm() / y.norm();
            assert!(resid < 1e-10, "residual {resid}");
        }
    }

    #[test]
    fn gram_distance_matches_dense() {
        let geom = ArrayGeometry::half_wavelength(2, 3).unwrap();
        let specs = generate_paths(2, &PathStatistics::default(), 2).unwrap();
        let a = build_ecsi(&specs[0], &geom, 16, &[1e6, 3e6]).unwrap();
        let b = build_ecsi(&specs[1], &geom, 16, &[1e6, 3e6]).unwrap();
        let mut dense = 0.0;
        let mut energy = 0.0;
        for g in 0..2 {
            for m in 0..6 {
                dense += (a.q(m, g) - b.q(m, g)).norm_squared();
                energy += a.q(m, g).norm_squared();
            }
        }
        assert!((a.distance_sq(&b).unwrap() - dense).abs() < 1e-12 * dense);
        assert!((a.energy() - energy).abs() < 1e-12 * energy);
    }
}
