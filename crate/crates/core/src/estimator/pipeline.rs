use serde::{Deserialize, Serialize};

use super::angle::{ad_omp, esprit_2d, ls_equivalent_gain, reconstruct_ecsi, steering_matrix, AngleEstimate};
use super::delay::{dd_omp, esprit_1d, estimate_model_order, ls_path_gains, reconstruct_scsi, ModelOrderRule};
use super::{PilotPlan, UplinkObservations};
use crate::channel::{ArrayGeometry, SystemConfig, UeChannelSpec, UeEcsi};
use crate::error::{domain, Error, Result};
use crate::linalg::{CMat, RVec};
use crate::precoder::EmPrecoder;
use crate::sphharm::basis_matrix;

/// Where the stage-two input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScsiSource {
    /// 1D-ESPRIT delays on the uniform comb plus LS gains.
    Esprit,
    /// Simultaneous OMP on an oversampled delay grid.
    DdOmp,
    /// The true full-band sCSI.
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleMethod {
    Esprit,
    AdOmp,
    /// True departure angles.
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderSelection {
    Estimated(ModelOrderRule),
    /// Number of distinct delays and of paths taken from the ground truth.
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub scsi: ScsiSource,
    pub angles: AngleMethod,
    pub order: OrderSelection,
    pub delay_oversampling: usize,
    pub angle_oversampling: usize,
    /// Largest accepted condition number of the delay-domain normal matrix.
    pub max_condition: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            scsi: ScsiSource::Esprit,
            angles: AngleMethod::Esprit,
            order: OrderSelection::Estimated(ModelOrderRule::default()),
            delay_oversampling: 4,
            angle_oversampling: 4,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    pub low_confidence_order: bool,
    /// A model order was lowered after a rank-deficient solve.
    pub order_reduced: bool,
    pub wrapped_delays: usize,
    pub clamped_angles: usize,
    pub ambiguous_pairing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeEstimate {
    pub delays: Vec<f64>,
    pub angles: AngleEstimate,
    /// `scsi[t]` is the `G × M` channel under receive pattern `α^{(t)}`.
    pub scsi: Vec<CMat>,
    /// Equivalent gains `r̂_g` as columns (`L × G`).
    pub gains: CMat,
    pub ecsi: UeEcsi,
    pub flags: EstimateFlags,
}

/// `h^{(t)}_{m,g}` for every pattern of the schedule, each `G × M`.
pub fn true_scsi(truth: &UeEcsi, patterns: &[RVec]) -> Vec<CMat> {
    patterns
        .iter()
        .map(|alpha| {
            let p = truth.project(&EmPrecoder::Single(alpha.clone()));
            let mut h = CMat::zeros(truth.subcarriers(), truth.antennas());
            for g in 0..truth.subcarriers() {
                h.row_mut(g).copy_from(&truth.effective_row(g, &p).transpose());
            }
            h
        })
        .collect()
}

/// Runs `f` at `order`, lowering the order while it reports rank deficiency.
fn with_fallback<T>(order: usize, reduced: &mut bool, mut f: impl FnMut(usize) -> Result<T>) -> Result<T> {
    let mut l = order;
    loop {
        match f(l) {
            Err(Error::RankDeficient(_)) if l > 1 => {
                *reduced = true;
                l -= 1;
            }
            other => return other,
        }
    }
}

fn distinct_delays(spec: &UeChannelSpec) -> usize {
    let mut d: Vec<f64> = spec.paths.iter().map(|p| p.delay).collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d.len()
}

/// Two-stage estimate of one user's sCSI and eCSI from its pilot observations.
///
/// `spec` and `truth` are consulted only by the perfect-input modes and the
/// true-order mode.
pub fn estimate_ue(
    obs: &UplinkObservations,
    plan: &PilotPlan,
    geom: &ArrayGeometry,
    sys: &SystemConfig,
    spec: &UeChannelSpec,
    truth: &UeEcsi,
    cfg: &EstimatorConfig,
) -> Result<UeEstimate> {
    let m = geom.antennas();
    let t = plan.time_symbols();
    let j = obs.subcarriers.len();
    if obs.samples.len() != t || obs.samples.iter().any(|s| s.nrows() != m || s.ncols() != j) {
        return Err(Error::Dimension("observations do not match the array and pilot plan".into()));
    }
    let freqs = sys.frequencies();
    let comb_freqs: Vec<f64> = obs.subcarriers.iter().map(|&g| sys.frequency(g)).collect();
    let mut flags = EstimateFlags::default();

    // Stage one: full-band sCSI.
    let h_tilde = obs.despread();
    let y_d = CMat::from_fn(j, t * m, |jj, col| h_tilde[col / m][(col % m, jj)]);
    let delay_order = |flags: &mut EstimateFlags| -> Result<usize> {
        match cfg.order {
            OrderSelection::True => Ok(distinct_delays(spec)),
            OrderSelection::Estimated(rule) => {
                let mo = estimate_model_order(&y_d, &rule)?;
                flags.low_confidence_order |= mo.low_confidence;
                Ok(mo.order)
            }
        }
    };
    let (delays, scsi) = match cfg.scsi {
        ScsiSource::Perfect => (spec.paths.iter().map(|p| p.delay).collect(), true_scsi(truth, &plan.patterns)),
        source => {
            let order = delay_order(&mut flags)?;
            let mut reduced = false;
            let (delays, gains) = with_fallback(order, &mut reduced, |l| match source {
                ScsiSource::Esprit => {
                    let spacing = plan
                        .uniform_spacing(obs.user)
                        .ok_or_else(|| Error::Domain("1D-ESPRIT needs a uniform pilot comb".into()))?;
                    let (delays, wrapped) = esprit_1d(&y_d, l, spacing as f64 * sys.subcarrier_spacing)?;
                    let gains = ls_path_gains(&delays, &comb_freqs, &y_d, cfg.max_condition)?;
                    flags.wrapped_delays = wrapped;
                    Ok((delays, gains))
                }
                _ => {
                    let est = dd_omp(&y_d, &comb_freqs, sys.subcarrier_spacing, sys.subcarriers, cfg.delay_oversampling, l)?;
                    Ok((est.delays, est.gains))
                }
            })?;
            flags.order_reduced |= reduced;
            let full = reconstruct_scsi(&delays, &gains, &freqs);
            let blocks = (0..t).map(|tt| full.columns(tt * m, m).into_owned()).collect();
            (delays, blocks)
        }
    };

    // Stage two: angles, equivalent gains, eCSI.
    let y_a = CMat::from_fn(m, t * j, |mm, col| scsi[col / j][(obs.subcarriers[col % j], mm)]);
    let angle_order = match cfg.order {
        OrderSelection::True => spec.num_paths(),
        OrderSelection::Estimated(rule) => {
            let mo = estimate_model_order(&y_a, &rule)?;
            flags.low_confidence_order |= mo.low_confidence;
            let cap = ((geom.m_y.saturating_sub(1)) * geom.m_z).min(geom.m_y * geom.m_z.saturating_sub(1)).max(1);
            mo.order.min(cap)
        }
    };
    let k = plan.k();
    let mut reduced = false;
    let (angles, steering, omega, gains) = with_fallback(angle_order, &mut reduced, |l| {
        let angles = match cfg.angles {
            AngleMethod::Esprit => esprit_2d(&y_a, geom, l)?,
            AngleMethod::AdOmp => ad_omp(&y_a, geom, cfg.angle_oversampling, l)?,
            AngleMethod::Perfect => {
                let dirs = spec.aods();
                let (mu, nu) = dirs.iter().map(|d| geom.spatial_frequencies(*d)).unzip();
                AngleEstimate { mu, nu, directions: dirs, clamped: 0, leakage: 0.0, ambiguous: false }
            }
        };
        let steering = steering_matrix(geom, &angles.directions);
        let omega = basis_matrix(k, &angles.directions);
        let gains = ls_equivalent_gain(&scsi, &steering, &omega, &plan.patterns)?;
        Ok((angles, steering, omega, gains))
    })?;
    flags.order_reduced |= reduced;
    flags.clamped_angles = angles.clamped;
    flags.ambiguous_pairing = angles.ambiguous;
    let ecsi = reconstruct_ecsi(&gains, &steering, &omega)?;
    if ecsi.subcarriers() != sys.subcarriers {
        return domain("reconstructed eCSI does not span the band");
    }
    Ok(UeEstimate { delays, angles, scsi, gains, ecsi, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_ecsi, generate_paths, PathStatistics};
    use crate::estimator::{allocate_pilots, uplink_observe};
    use crate::linalg::{energy, min_cost_assignment};

    struct Setup {
        geom: ArrayGeometry,
        sys: SystemConfig,
        spec: UeChannelSpec,
        truth: UeEcsi,
        plan: PilotPlan,
    }

    fn setup(seed: u64, g: usize, k: usize, j: usize, t: usize) -> Setup {
        let geom = ArrayGeometry::half_wavelength(6, 6).unwrap();
        let sys = SystemConfig::new(g, 30e3, 1, 1.0).unwrap();
        let spec = generate_paths(seed, &PathStatistics::default(), 1).unwrap().remove(0);
        let truth = build_ecsi(&spec, &geom, k, &sys.frequencies()).unwrap();
        let plan = PilotPlan::new(allocate_pilots(g, 1, j).unwrap(), t, k, seed).unwrap();
        Setup { geom, sys, spec, truth, plan }
    }

    fn nmse_s(est: &[CMat], truth: &[CMat]) -> f64 {
        let err: f64 = est.iter().zip(truth).map(|(a, b)| energy(&(a - b))).sum();
        err / truth.iter().map(energy).sum::<f64>()
    }

    #[test]
    fn noiseless_pipeline_is_exact() {
        let s = setup(21, 512, 100, 24, 3);
        let obs = uplink_observe(&s.truth, &s.plan, 0, f64::INFINITY, 1).unwrap();
        let cfg = EstimatorConfig { order: OrderSelection::True, ..Default::default() };
        let est = estimate_ue(&obs, &s.plan, &s.geom, &s.sys, &s.spec, &s.truth, &cfg).unwrap();
        let truth_delays: Vec<f64> = s.spec.paths.iter().map(|p| p.delay).collect();
        let cost: Vec<Vec<f64>> = est.delays.iter().map(|a| truth_delays.iter().map(|b| (a - b).abs() / b).collect()).collect();
        assert!(min_cost_assignment(&cost).iter().all(|&(a, b)| cost[a][b] < 1e-9));
        let hs = true_scsi(&s.truth, &s.plan.patterns);
        assert!(nmse_s(&est.scsi, &hs) < 1e-10);
        let nmse_e = est.ecsi.distance_sq(&s.truth).unwrap() / s.truth.energy();
        assert!(nmse_e < 1e-10, "{nmse_e}");
    }

    #[test]
    fn perfect_inputs_give_exact_ecsi() {
        let s = setup(22, 64, 25, 16, 2);
        let obs = uplink_observe(&s.truth, &s.plan, 0, 10.0, 1).unwrap();
        let cfg = EstimatorConfig { scsi: ScsiSource::Perfect, angles: AngleMethod::Perfect, ..Default::default() };
        let est = estimate_ue(&obs, &s.plan, &s.geom, &s.sys, &s.spec, &s.truth, &cfg).unwrap();
        assert!(est.ecsi.distance_sq(&s.truth).unwrap() / s.truth.energy() < 1e-12);
        // Regenerated sCSI under any pattern is q̂ᴴα.
        let alpha = crate::precoder::baseline_coefficients(crate::sphharm::BaselinePattern::Dipole, 25).unwrap();
        let em = EmPrecoder::Single(alpha);
        let p = est.ecsi.project(&em);
        for (m, g) in [(0, 0), (7, 30), (35, 63)] {
            let via_q = est.ecsi.q(m, g).dot(&em.alpha(m).map(crate::linalg::C64::from)).conj();
            assert!((est.ecsi.effective_row(g, &p)[m] - via_q).norm() < 1e-12);
        }
    }

    #[test]
    fn noisy_estimators_run_and_order_sensibly() {
        let mut totals = [0.0; 3];
        for seed in 0..4 {
            let s = setup(100 + seed, 256, 36, 24, 3);
            let obs = uplink_observe(&s.truth, &s.plan, 0, 15.0, seed).unwrap();
            for (i, src) in [ScsiSource::Esprit, ScsiSource::DdOmp, ScsiSource::Perfect].into_iter().enumerate() {
                let cfg = EstimatorConfig { scsi: src, ..Default::default() };
                let est = estimate_ue(&obs, &s.plan, &s.geom, &s.sys, &s.spec, &s.truth, &cfg).unwrap();
                totals[i] += est.ecsi.distance_sq(&s.truth).unwrap() / s.truth.energy();
            }
        }
        assert!(totals[2] < totals[0] && totals[2] < totals[1], "{totals:?}");
    }
}
