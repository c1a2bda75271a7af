//! Uplink pilot simulation and the two-stage channel estimator.
//!
//! Stage one recovers path delays from a uniform pilot comb with 1D-ESPRIT and
//! rebuilds the full-band spatial channel by least squares. Stage two recovers
//! the departure angles with 2D-ESPRIT over the planar array, then solves for
//! per-path equivalent gains, which together with the estimated steering and
//! spherical-harmonic bases give the EM-domain channel. Orthogonal matching
//! pursuit over oversampled delay and angle grids serves as the baseline.
//!
//! All estimators work on the despread samples `h̃ = (y/s)*`, which equal the
//! downlink channel `h^{(t)}_{m,g}` seen through the receive pattern `α^{(t)}`
//! plus white noise.

mod angle;
mod delay;
mod io;
mod pipeline;

pub use angle::{ad_omp, angles_from_frequencies, esprit_2d, ls_equivalent_gain, reconstruct_ecsi, steering_matrix, AngleEstimate};
pub use delay::{dd_omp, esprit_1d, estimate_model_order, ls_path_gains, reconstruct_scsi, DelayEstimate, ModelOrder, ModelOrderRule};
pub use io::write_estimate;
pub use pipeline::{
    estimate_ue, true_scsi, AngleMethod, EstimateFlags, EstimatorConfig, OrderSelection, ScsiSource, UeEstimate,
};

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::UeEcsi;
use crate::error::{domain, Error, Result};
use crate::linalg::{CMat, RVec, C64};
use crate::precoder::EmPrecoder;
use crate::sphharm::{max_degree, project_pattern, quadrature_grid, SphericalDirection, DEFAULT_GRID};

/// Disjoint uniform combs: UE `u` uses subcarriers `u + ⌊G/J⌋·j`, `j < J`.
pub fn allocate_pilots(subcarriers: usize, users: usize, per_user: usize) -> Result<Vec<Vec<usize>>> {
    if users == 0 || per_user == 0 {
        return domain("need at least one user and one pilot per user");
    }
    if users * per_user > subcarriers {
        return domain(format!("{users} users × {per_user} pilots exceed G = {subcarriers}"));
    }
    let spacing = subcarriers / per_user;
    if spacing < users {
        return domain(format!("comb spacing {spacing} cannot separate {users} users"));
    }
    Ok((0..users).map(|u| (0..per_user).map(|j| u + spacing * j).collect()).collect())
}

/// Disjoint random pilot sets of equal size, each sorted ascending.
pub fn random_pilots(subcarriers: usize, users: usize, per_user: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if users == 0 || per_user == 0 {
        return domain("need at least one user and one pilot per user");
    }
    if users * per_user > subcarriers {
        return domain(format!("{users} users × {per_user} pilots exceed G = {subcarriers}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..subcarriers).collect();
    all.shuffle(&mut rng);
    Ok(all
        .chunks(per_user)
        .take(users)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_unstable();
            v
        })
        .collect())
}

/// Amplitude of a Hertz dipole along `axis`: `√(1 − (u·a)²)`.
fn rotated_dipole(axis: [f64; 3], dir: SphericalDirection) -> f64 {
    let u = dir.unit_vector();
    let c = u[0] * axis[0] + u[1] * axis[1] + u[2] * axis[2];
    (1.0 - c * c).max(0.0).sqrt()
}

/// `T` orthonormal receive patterns: projections of dipoles along a fixed list of
/// axes, Gram–Schmidt orthonormalized, topped up with unit coefficient vectors if
/// the dipoles do not span `T` dimensions at this truncation.
pub fn receive_pattern_schedule(k: usize, symbols: usize) -> Result<Vec<RVec>> {
    if k == 0 || symbols == 0 {
        return domain("need K ≥ 1 and at least one time symbol");
    }
    if symbols > k {
        return domain(format!("T = {symbols} independent patterns need K ≥ T, got K = {k}"));
    }
    let r = FRAC_1_SQRT_2;
    let s = 1.0 / 3f64.sqrt();
    let axes = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [r, r, 0.0], [r, 0.0, r], [0.0, r, r], [s, s, s], [s, -s, s]];
    let c_max = max_degree(k) as usize;
    let grid = quadrature_grid(DEFAULT_GRID.0.max(2 * c_max + 2), DEFAULT_GRID.1.max(2 * (2 * c_max + 1)))?;
    let dipoles = axes
        .iter()
        .map(|a| project_pattern(&grid.sample(|d| rotated_dipole(*a, d)), k).map(|p| RVec::from_vec(p.alpha)));
    let units = (0..k).map(|i| Ok(RVec::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 })));
    let mut basis: Vec<RVec> = Vec::with_capacity(symbols);
    for candidate in dipoles.chain(units) {
        if basis.len() == symbols {
            break;
        }
        let mut v = candidate?;
        let scale = v.norm();
        for b in &basis {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
        if v.norm() > 1e-6 * scale {
            basis.push(v.normalize());
        }
    }
    Ok(basis)
}

/// Uplink pilot configuration shared by all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPlan {
    /// Pilot subcarriers of each user (zero-based, ascending).
    pub combs: Vec<Vec<usize>>,
    /// `symbols[u][t][j]`, unit modulus.
    pub symbols: Vec<Vec<Vec<C64>>>,
    /// Receive pattern of each time symbol, shared by all antennas.
    pub patterns: Vec<RVec>,
}

impl PilotPlan {
    /// QPSK symbols drawn from `seed` on the given combs, with the rotated-dipole schedule.
    pub fn new(combs: Vec<Vec<usize>>, time_symbols: usize, k: usize, seed: u64) -> Result<Self> {
        let patterns = receive_pattern_schedule(k, time_symbols)?;
        Self::with_patterns(combs, patterns, seed)
    }

    pub fn with_patterns(combs: Vec<Vec<usize>>, patterns: Vec<RVec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols = combs
            .iter()
            .map(|comb| {
                (0..patterns.len())
                    .map(|_| comb.iter().map(|_| qpsk(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let plan = Self { combs, symbols, patterns };
        plan.validate()?;
        Ok(plan)
    }

    pub fn time_symbols(&self) -> usize {
        self.patterns.len()
    }

    pub fn users(&self) -> usize {
        self.combs.len()
    }

    pub fn k(&self) -> usize {
        self.patterns.first().map(|p| p.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.combs.first().map(|c| c.len()).unwrap_or(0);
        if j == 0 || self.combs.iter().any(|c| c.len() != j) {
            return domain("pilot combs must be non-empty and of equal size");
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.combs {
            if c.windows(2).any(|w| w[0] >= w[1]) {
                return domain("pilot subcarriers must be strictly increasing");
            }
            if c.iter().any(|g| !seen.insert(*g)) {
                return domain("pilot combs of different users overlap");
            }
        }
        if self.patterns.is_empty() {
            return domain("need at least one time symbol");
        }
        let k = self.k();
        if self.patterns.iter().any(|p| p.len() != k || (p.norm() - 1.0).abs() > 1e-9) {
            return domain("receive patterns must share K and have unit norm");
        }
        for (u, per_t) in self.symbols.iter().enumerate() {
            if per_t.len() != self.time_symbols() || per_t.iter().any(|s| s.len() != self.combs[u].len()) {
                return Err(Error::Dimension("pilot symbols do not match the combs".into()));
            }
            if per_t.iter().flatten().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
                return domain("pilot symbols must have unit modulus");
            }
        }
        Ok(())
    }

    /// Comb spacing of user `u` in subcarriers, if the comb is uniform.
    pub fn uniform_spacing(&self, u: usize) -> Option<usize> {
        let c = &self.combs[u];
        match c.len() {
            0 => None,
            1 => Some(1),
            _ => {
                let d = c[1] - c[0];
                c.windows(2).all(|w| w[1] - w[0] == d).then_some(d)
            }
        }
    }
}

fn qpsk(rng: &mut impl Rng) -> C64 {
    let q: u8 = rng.random_range(0..4);
    crate::linalg::cis(PI / 4.0 + PI / 2.0 * q as f64)
}

fn complex_noise(rng: &mut impl Rng, std: f64) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * (std * FRAC_1_SQRT_2)
}

/// Pilot samples received by one user's comb.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkObservations {
    pub user: usize,
    pub subcarriers: Vec<usize>,
    /// `samples[t]` is `M × J`.
    pub samples: Vec<CMat>,
    pub symbols: Vec<Vec<C64>>,
    /// Per-sample noise variance (0 when noiseless).
    pub noise_variance: f64,
}

impl UplinkObservations {
    /// `(y/s)*` per time symbol, `M × J`.
    pub fn despread(&self) -> Vec<CMat> {
        self.samples
            .iter()
            .zip(&self.symbols)
            .map(|(y, s)| CMat::from_fn(y.nrows(), y.ncols(), |m, j| (y[(m, j)] / s[j]).conj()))
            .collect()
    }
}

/// `y = (α^{(t)})ᵀ q_{m,g_j} s + n` for user `u`.
///
/// The noise variance is the mean noiseless sample power divided by the linear
/// SNR; an infinite `snr_db` gives noiseless samples.
pub fn uplink_observe(truth: &UeEcsi, plan: &PilotPlan, user: usize, snr_db: f64, seed: u64) -> Result<UplinkObservations> {
    if user >= plan.users() {
        return domain(format!("user {user} has no pilot comb"));
    }
    if truth.k() != plan.k() {
        return Err(Error::Dimension(format!("eCSI has K = {}, pilot patterns K = {}", truth.k(), plan.k())));
    }
    let comb = &plan.combs[user];
    if comb.iter().any(|&g| g >= truth.subcarriers()) {
        return domain("pilot subcarrier beyond the channel bandwidth");
    }
    let m = truth.antennas();
    let clean: Vec<CMat> = plan
        .patterns
        .iter()
        .zip(&plan.symbols[user])
        .map(|(alpha, syms)| {
            let projected = truth.project(&EmPrecoder::Single(alpha.clone()));
            let mut y = CMat::zeros(m, comb.len());
            for (j, (&g, s)) in comb.iter().zip(syms).enumerate() {
                let h = truth.effective_row(g, &projected);
                for mm in 0..m {
                    y[(mm, j)] = h[mm].conj() * s;
                }
            }
            y
        })
        .collect();
    let noise_variance = if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        let count = (clean.len() * m * comb.len()) as f64;
        let power: f64 = clean.iter().map(crate::linalg::energy).sum::<f64>() / count;
        power / 10f64.powf(snr_db / 10.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = noise_variance.sqrt();
    let samples = clean
        .into_iter()
        .map(|mut y| {
            if std > 0.0 {
                y.iter_mut().for_each(|v| *v += complex_noise(&mut rng, std));
            }
            y
        })
        .collect();
    Ok(UplinkObservations {
        user,
        subcarriers: comb.clone(),
        samples,
        symbols: plan.symbols[user].clone(),
        noise_variance,
    })
}
