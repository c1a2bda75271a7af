use serde::{Deserialize, Serialize};

use super::{objective, spectral_efficiency, zf_all, DigitalPrecoder, EmPrecoder, PrecoderProblem};
use crate::channel::EcsiTensor;
use crate::error::{domain, Result};
use crate::linalg::{RMat, RVec};
use crate::manifold::{LineSearchParams, Manifold, RcgState};
use crate::sphharm::{baseline_pattern, project_pattern, quadrature_grid, BaselinePattern, DEFAULT_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderMode {
    /// Single mode: one pattern for all antennas.
    Sm,
    /// Multi mode: one pattern per antenna.
    Mm,
}

/// Starting EM precoder of the alternating design.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignInit {
    /// Unit-norm projection of a baseline pattern (a dipole in the reference design).
    Baseline(BaselinePattern),
    /// Explicit coefficients; a shared pattern is replicated for multi mode.
    Coefficients(EmPrecoder),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub eta_th: f64,
    pub iota_max: usize,
    /// RCG steps per digital-precoder refresh.
    pub inner_steps: usize,
    pub line_search: LineSearchParams,
    pub init: DesignInit,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            eta_th: 1e-4,
            iota_max: 200,
            inner_steps: 1,
            line_search: LineSearchParams::default(),
            init: DesignInit::Baseline(BaselinePattern::Dipole),
        }
    }
}

/// Output of the alternating design.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    pub mode: PrecoderMode,
    pub em: EmPrecoder,
    pub digital: DigitalPrecoder,
    /// SE after initialization and after every outer iteration; non-decreasing.
    pub se_trace: Vec<f64>,
    pub iterations: usize,
    /// EM updates rejected because the refreshed SE would have decreased.
    pub rejected: usize,
    /// The optimizer stopped without meeting the relative-change threshold.
    pub stagnated: bool,
}

impl PrecoderSolution {
    pub fn se(&self) -> f64 {
        *self.se_trace.last().expect("trace holds the initial SE")
    }

    /// SE divided by the number of subcarriers.
    pub fn se_per_subcarrier(&self) -> f64 {
        self.se() / self.digital.len() as f64
    }
}

/// Unit-norm projection of a baseline pattern onto the first `k` bases.
pub fn baseline_coefficients(pattern: BaselinePattern, k: usize) -> Result<RVec> {
    let (nt, np) = DEFAULT_GRID;
    let c_max = crate::sphharm::max_degree(k) as usize;
    let grid = quadrature_grid(nt.max(2 * c_max + 2), np.max(2 * (2 * c_max + 1)))?;
    let alpha = project_pattern(&grid.sample(|d| baseline_pattern(pattern, d)), k)?.normalized()?;
    Ok(RVec::from_vec(alpha.alpha))
}

fn initial_em(problem: &PrecoderProblem, mode: PrecoderMode, init: &DesignInit) -> Result<EmPrecoder> {
    let em = match init {
        DesignInit::Baseline(p) => EmPrecoder::Single(baseline_coefficients(*p, problem.k())?),
        DesignInit::Coefficients(em) => em.clone(),
    };
    if em.k() != problem.k() {
        return domain(format!("initial precoder has K = {}, problem has K = {}", em.k(), problem.k()));
    }
    let em = match (mode, em) {
        (PrecoderMode::Sm, EmPrecoder::Single(a)) => EmPrecoder::Single(a),
        (PrecoderMode::Sm, EmPrecoder::Multi(_)) => return domain("single-mode design needs a shared initial pattern"),
        (PrecoderMode::Mm, em) => EmPrecoder::Multi(em.to_multi(problem.antennas())),
    };
    if em.norm_error() > 1e-10 {
        return domain("initial EM precoder must have unit-norm patterns");
    }
    Ok(em)
}

fn to_point(em: &EmPrecoder) -> RMat {
    match em {
        EmPrecoder::Single(a) => RMat::from_column_slice(a.len(), 1, a.as_slice()),
        EmPrecoder::Multi(l) => l.clone(),
    }
}

fn from_point(mode: PrecoderMode, x: &RMat) -> EmPrecoder {
    match mode {
        PrecoderMode::Sm => EmPrecoder::Single(x.column(0).into_owned()),
        PrecoderMode::Mm => EmPrecoder::Multi(x.clone()),
    }
}

/// Alternating EM/digital design with accept-on-improve.
///
/// Each outer iteration takes `inner_steps` RCG steps on `−R(·, W)` with `W`
/// fixed, refreshes `W` by zero forcing, and commits the pair only if the SE
/// did not decrease. A rejected update is rolled back, the CG history is
/// cleared, and the initial line-search step is halved.
fn alternating_design(problem: &PrecoderProblem, mode: PrecoderMode, options: &DesignOptions) -> Result<PrecoderSolution> {
    options.line_search.validate()?;
    if options.inner_steps == 0 {
        return domain("inner_steps must be at least 1");
    }
    let mut em = initial_em(problem, mode, &options.init)?;
    let mut w = zf_all(problem, &em)?;
    let mut se = spectral_efficiency(problem, &em, &w)?;
    let manifold = match mode {
        PrecoderMode::Sm => Manifold::Sphere,
        PrecoderMode::Mm => Manifold::Oblique { mask: None },
    };
    let mut state = RcgState::new(manifold, to_point(&em))?;
    let mut params = options.line_search;
    let mut trace = vec![se];
    let mut rejected = 0;
    let mut stagnated = false;
    let mut iterations = 0;

    while iterations < options.iota_max {
        iterations += 1;
        let w_fixed = w.clone();
        let f = |x: &RMat| objective(problem, &from_point(mode, x), &w_fixed);
        let value = |x: &RMat| f(x).0;
        let mut moved = false;
        let mut steepest_stall = false;
        let mut steps = 0;
        let mut retried = false;
        while steps < options.inner_steps {
            let info = state.step(&f, &value, &params)?;
            if info.stagnated {
                // the state restarts itself; retry once along −grad
                if retried {
                    steepest_stall = true;
                    break;
                }
                retried = true;
                continue;
            }
            moved = true;
            steps += 1;
        }
        if !moved {
            // no descent even along −grad with W fixed: nothing left to gain
            stagnated = steepest_stall;
            trace.push(se);
            break;
        }
        let candidate = from_point(mode, &state.point);
        let refreshed = zf_all(problem, &candidate).and_then(|wc| Ok((spectral_efficiency(problem, &candidate, &wc)?, wc)));
        match refreshed {
            Ok((se_new, w_new)) if se_new >= se => {
                let rel = (se_new - se).abs() / se_new.abs().max(f64::MIN_POSITIVE);
                em = candidate;
                w = w_new;
                se = se_new;
                trace.push(se);
                if rel <= options.eta_th {
                    break;
                }
            }
            _ => {
                rejected += 1;
                state.set_point(to_point(&em));
                state.restart();
                params.initial_step *= 0.5;
                trace.push(se);
                if params.initial_step < 1e-10 {
                    stagnated = true;
                    break;
                }
            }
        }
    }
    Ok(PrecoderSolution { mode, em, digital: w, se_trace: trace, iterations, rejected, stagnated })
}

/// Single-mode design (shared pattern on the sphere).
pub fn alternating_design_sm(problem: &PrecoderProblem, options: &DesignOptions) -> Result<PrecoderSolution> {
    alternating_design(problem, PrecoderMode::Sm, options)
}

/// Multi-mode design (per-antenna patterns on the oblique manifold).
pub fn alternating_design_mm(problem: &PrecoderProblem, options: &DesignOptions) -> Result<PrecoderSolution> {
    alternating_design(problem, PrecoderMode::Mm, options)
}

/// SE of a conventional array: every antenna uses the unit-norm projection of
/// `pattern`, digital precoding is zero forcing.
pub fn tm_baseline_se(problem: &PrecoderProblem, pattern: BaselinePattern) -> Result<f64> {
    let em = EmPrecoder::Single(baseline_coefficients(pattern, problem.k())?);
    let w = zf_all(problem, &em)?;
    spectral_efficiency(problem, &em, &w)
}

/// Noise variance giving a downlink SNR of `snr_db` for the 38.901 baseline with
/// zero forcing: `σ² = mean_{u,g} ‖s_{u,g}‖² / SNR`.
pub fn calibrate_noise_variance(ecsi: &EcsiTensor, power_budget: f64, snr_db: f64) -> Result<f64> {
    let probe = PrecoderProblem::new(ecsi, 1.0, power_budget)?;
    let em = EmPrecoder::Single(baseline_coefficients(BaselinePattern::Tgpp38901, ecsi.k())?);
    let w = zf_all(&probe, &em)?;
    let rows = probe.channel_rows(&em);
    let mut power = 0.0;
    let mut count = 0usize;
    for user_rows in &rows {
        for (h, wg) in user_rows.iter().zip(&w) {
            power += (wg.transpose() * h).norm_squared();
            count += 1;
        }
    }
    let mean = power / count as f64;
    if !(mean > 0.0) {
        return domain("received signal power is zero; cannot calibrate the downlink SNR");
    }
    Ok(mean / 10f64.powf(snr_db / 10.0))
}
