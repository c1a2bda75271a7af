//! Spectral efficiency of the joint EM-domain/digital precoder, its Euclidean
//! gradients, zero forcing, and the alternating design of both blocks.
//!
//! Signal model per user `u` and subcarrier `g`: the effective channel row is
//! `h_m = q_{m}ᴴ α_m` and the received stream amplitudes are `s = Wᵀh` (one
//! entry per scheduled user), so `SINR_u = |s_u|² / (Σ_{u'≠u} |s_{u'}|² + σ²)`.

mod design;
mod io;

pub use design::{
    alternating_design_mm, alternating_design_sm, baseline_coefficients, calibrate_noise_variance,
    tm_baseline_se, DesignInit, DesignOptions, PrecoderMode, PrecoderSolution,
};
pub use io::write_solution;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{EcsiTensor, UeEcsi};
use crate::error::{domain, Error, Result};
use crate::linalg::{hermitian_eigenvalues, CMat, CVec, RMat, RVec, C64};

/// EM-domain precoder: one pattern shared by all antennas, or one per antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmPrecoder {
    Single(RVec),
    /// `K × M`, column `m` is `α_m`.
    Multi(RMat),
}

impl EmPrecoder {
    pub fn k(&self) -> usize {
        match self {
            EmPrecoder::Single(a) => a.len(),
            EmPrecoder::Multi(l) => l.nrows(),
        }
    }

    /// `α_m` (zero-based antenna).
    pub fn alpha(&self, m: usize) -> RVec {
        match self {
            EmPrecoder::Single(a) => a.clone(),
            EmPrecoder::Multi(l) => l.column(m).into_owned(),
        }
    }

    /// Per-antenna form with `antennas` identical columns for a shared pattern.
    pub fn to_multi(&self, antennas: usize) -> RMat {
        match self {
            EmPrecoder::Single(a) => RMat::from_fn(a.len(), antennas, |k, _| a[k]),
            EmPrecoder::Multi(l) => l.clone(),
        }
    }

    /// `Λ = Blkdiag{α_1, …, α_M}` (`K·M × M`).
    pub fn block_diagonal(&self, antennas: usize) -> RMat {
        let compact = self.to_multi(antennas);
        let k = compact.nrows();
        RMat::from_fn(k * antennas, antennas, |r, c| if r / k == c { compact[(r % k, c)] } else { 0.0 })
    }

    /// Inverse of [`Self::block_diagonal`]; off-block entries are ignored.
    pub fn from_block_diagonal(lambda: &RMat) -> Result<Self> {
        let m = lambda.ncols();
        if m == 0 || !lambda.nrows().is_multiple_of(m) {
            return Err(Error::Dimension(format!("{}×{m} is not a block-diagonal layout", lambda.nrows())));
        }
        let k = lambda.nrows() / m;
        Ok(EmPrecoder::Multi(RMat::from_fn(k, m, |r, c| lambda[(c * k + r, c)])))
    }

    /// Largest deviation of any `‖α_m‖` from 1.
    pub fn norm_error(&self) -> f64 {
        match self {
            EmPrecoder::Single(a) => (a.norm() - 1.0).abs(),
            EmPrecoder::Multi(l) => l.column_iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max),
        }
    }
}

/// Per-subcarrier digital precoders `W_g` (`M × U`).
pub type DigitalPrecoder = Vec<CMat>;

/// eCSI plus link budget.
#[derive(Debug, Clone, Copy)]
pub struct PrecoderProblem<'a> {
    pub ecsi: &'a EcsiTensor,
    pub noise_variance: f64,
    /// Total transmit power `P_T` over all subcarriers.
    pub power_budget: f64,
}

impl<'a> PrecoderProblem<'a> {
    pub fn new(ecsi: &'a EcsiTensor, noise_variance: f64, power_budget: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return domain(format!("noise variance must be positive, got {noise_variance}"));
        }
        if !(power_budget >= 0.0) || !power_budget.is_finite() {
            return domain(format!("power budget must be non-negative, got {power_budget}"));
        }
        if ecsi.antennas() < ecsi.num_users() {
            return domain(format!("{} antennas cannot serve {} users", ecsi.antennas(), ecsi.num_users()));
        }
        Ok(Self { ecsi, noise_variance, power_budget })
    }

    pub fn xi(&self) -> f64 {
        1.0 / self.noise_variance
    }

    pub fn users(&self) -> usize {
        self.ecsi.num_users()
    }

    pub fn antennas(&self) -> usize {
        self.ecsi.antennas()
    }

    pub fn subcarriers(&self) -> usize {
        self.ecsi.subcarriers()
    }

    pub fn k(&self) -> usize {
        self.ecsi.k()
    }

    fn check(&self, em: &EmPrecoder, w: &[CMat]) -> Result<()> {
        if em.k() != self.k() {
            return Err(Error::Dimension(format!("EM precoder has K = {}, eCSI has K = {}", em.k(), self.k())));
        }
        if let EmPrecoder::Multi(l) = em {
            if l.ncols() != self.antennas() {
                return Err(Error::Dimension(format!("{} patterns for {} antennas", l.ncols(), self.antennas())));
            }
        }
        if w.len() != self.subcarriers() {
            return Err(Error::Dimension(format!("{} digital precoders for {} subcarriers", w.len(), self.subcarriers())));
        }
        if w.iter().any(|wg| wg.nrows() != self.antennas() || wg.ncols() != self.users()) {
            return Err(Error::Dimension("digital precoder must be M × U".into()));
        }
        Ok(())
    }

    /// Effective channel rows `h_{u,g}` for every user and subcarrier.
    pub fn channel_rows(&self, em: &EmPrecoder) -> Vec<Vec<CVec>> {
        self.ecsi
            .users
            .iter()
            .map(|ue| {
                let p = ue.project(em);
                (0..ue.subcarriers()).map(|g| ue.effective_row(g, &p)).collect()
            })
            .collect()
    }
}

/// Rate terms and the `L × M` real accumulator `Σ_g Re(Z_g ∘ c_g)` whose
/// `Ωᵀ`-image is `∂R/∂Λ` for one user.
fn user_terms(ue: &UeEcsi, u: usize, em: &EmPrecoder, w: &[CMat], xi: f64) -> (f64, RMat) {
    let p = ue.project(em);
    let (l, m) = (ue.paths(), ue.antennas());
    let mut acc = RMat::zeros(l, m);
    let mut rate = 0.0;
    for (g, wg) in w.iter().enumerate() {
        let h = ue.effective_row(g, &p);
        let s = wg.transpose() * &h;
        let total = s.norm_squared();
        let own = s[u].norm_sqr();
        let interference = (total - own).max(0.0);
        rate += ((1.0 + xi * total) / (1.0 + xi * interference)).log2();
        if total == 0.0 {
            continue;
        }
        let sc = s.map(|v| v.conj());
        let c1 = wg * &sc;
        let c2 = &c1 - wg.column(u) * sc[u];
        let a1 = 2.0 * xi / (1.0 + xi * total);
        let a2 = 2.0 * xi / (1.0 + xi * interference);
        let z = &ue.z[g];
        for mm in 0..m {
            let c = c1[mm] * a1 - c2[mm] * a2;
            for i in 0..l {
                acc[(i, mm)] += (z[(i, mm)] * c).re;
            }
        }
    }
    (rate, acc)
}

/// `R = Σ_g Σ_u log2(1 + SINR_{u,g})`.
pub fn spectral_efficiency(problem: &PrecoderProblem, em: &EmPrecoder, w: &[CMat]) -> Result<f64> {
    problem.check(em, w)?;
    let xi = problem.xi();
    let rows = problem.channel_rows(em);
    let mut r = 0.0;
    for (u, user_rows) in rows.iter().enumerate() {
        for (h, wg) in user_rows.iter().zip(w) {
            let s = wg.transpose() * h;
            let total = s.norm_squared();
            let interference = (total - s[u].norm_sqr()).max(0.0);
            r += (1.0 + xi * total).log2() - (1.0 + xi * interference).log2();
        }
    }
    Ok(r.max(0.0))
}

/// Euclidean gradient `∇f = −∂R/∂α` of the single-mode objective `f = −R`.
pub fn sm_euclidean_gradient(problem: &PrecoderProblem, alpha: &RVec, w: &[CMat]) -> Result<RVec> {
    let em = EmPrecoder::Single(alpha.clone());
    problem.check(&em, w)?;
    let xi = problem.xi();
    let mut grad = RVec::zeros(alpha.len());
    for (u, ue) in problem.ecsi.users.iter().enumerate() {
        let (_, acc) = user_terms(ue, u, &em, w, xi);
        let summed: RVec = acc.column_sum();
        grad -= ue.omega.transpose() * summed;
    }
    Ok(grad / LN_2)
}

/// Euclidean gradient of `f = −R` with respect to the per-antenna coefficients,
/// in compact `K × M` form (column `m` is the free block of `Λ`).
pub fn mm_euclidean_gradient(problem: &PrecoderProblem, lambda: &RMat, w: &[CMat]) -> Result<RMat> {
    let em = EmPrecoder::Multi(lambda.clone());
    problem.check(&em, w)?;
    let xi = problem.xi();
    let mut grad = RMat::zeros(lambda.nrows(), lambda.ncols());
    for (u, ue) in problem.ecsi.users.iter().enumerate() {
        let (_, acc) = user_terms(ue, u, &em, w, xi);
        grad -= ue.omega.transpose() * acc;
    }
    Ok(grad / LN_2)
}

/// The same gradient on the full `K·M × M` block-diagonal carrier, masked.
pub fn mm_euclidean_gradient_masked(problem: &PrecoderProblem, lambda: &RMat, w: &[CMat]) -> Result<RMat> {
    let compact = match EmPrecoder::from_block_diagonal(lambda)? {
        EmPrecoder::Multi(l) => l,
        EmPrecoder::Single(_) => unreachable!("from_block_diagonal yields Multi"),
    };
    let g = mm_euclidean_gradient(problem, &compact, w)?;
    Ok(EmPrecoder::Multi(g).block_diagonal(lambda.ncols()))
}

/// `f = −R` and its Euclidean gradient for either mode.
pub(crate) fn objective(problem: &PrecoderProblem, em: &EmPrecoder, w: &[CMat]) -> (f64, RMat) {
    let xi = problem.xi();
    let m = problem.antennas();
    let (rows, cols) = match em {
        EmPrecoder::Single(a) => (a.len(), 1),
        EmPrecoder::Multi(l) => (l.nrows(), m),
    };
    let mut grad = RMat::zeros(rows, cols);
    let mut r = 0.0;
    for (u, ue) in problem.ecsi.users.iter().enumerate() {
        let (rate, acc) = user_terms(ue, u, em, w, xi);
        r += rate;
        match em {
            EmPrecoder::Single(_) => grad -= ue.omega.transpose() * RMat::from_columns(&[acc.column_sum()]),
            EmPrecoder::Multi(_) => grad -= ue.omega.transpose() * acc,
        }
    }
    (-r, grad / LN_2)
}

/// Zero forcing on the normalized channels.
///
/// `channels[u]` is the effective row `h_u` (received amplitude `h_uᵀw`).
/// Returns `W = √(P_T/G)·W̃/‖W̃‖_F` with `W̃ = V(VᴴV)⁻¹` and `v_u = h_u*/‖h_u‖`.
pub fn zf_precoder(channels: &[CVec], power_budget: f64, subcarriers: usize) -> Result<CMat> {
    let u = channels.len();
    if u == 0 {
        return Err(Error::Dimension("zero forcing needs at least one user".into()));
    }
    let m = channels[0].len();
    if channels.iter().any(|h| h.len() != m) {
        return Err(Error::Dimension("user channels differ in length".into()));
    }
    if m < u {
        return Err(Error::RankDeficient(format!("{m} antennas cannot null {u} users")));
    }
    if subcarriers == 0 {
        return domain("subcarrier count must be positive");
    }
    let mut v = CMat::zeros(m, u);
    for (j, h) in channels.iter().enumerate() {
        let n = h.norm();
        if !(n > 0.0) {
            return Err(Error::RankDeficient(format!("user {j} has an all-zero channel")));
        }
        v.set_column(j, &(h.map(|x| x.conj()) / C64::from(n)));
    }
    let gram = v.adjoint() * &v;
    let eig = hermitian_eigenvalues(&gram);
    let (max, min) = (eig[0], eig[eig.len() - 1]);
    if !(min > 1e-12 * max) {
        return Err(Error::RankDeficient(format!("user channels are colinear (Gram eigenvalues {max:.3e}..{min:.3e})")));
    }
    let inv = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Gram matrix of user channels is not positive definite".into()))?
        .inverse();
    let wt = v * inv;
    let scale = (power_budget / subcarriers as f64).sqrt() / wt.norm();
    Ok(wt * C64::from(scale))
}

/// ZF on every subcarrier for a given EM precoder.
pub fn zf_all(problem: &PrecoderProblem, em: &EmPrecoder) -> Result<DigitalPrecoder> {
    let rows = problem.channel_rows(em);
    (0..problem.subcarriers())
        .map(|g| {
            let hs: Vec<CVec> = rows.iter().map(|r| r[g].clone()).collect();
            zf_precoder(&hs, problem.power_budget, problem.subcarriers())
        })
        .collect()
}
