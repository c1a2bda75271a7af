use std::time::Instant;

use rayon::prelude::*;

use super::{derive_seed, nmse_e, nmse_s, trial_seed, Experiment, ExperimentConfig, MetricsRecord};
use crate::channel::{build_ecsi, generate_paths, ArrayGeometry, EcsiTensor, SystemConfig, UeChannelSpec, UeEcsi};
use crate::error::{Error, Result};
use crate::estimator::{
    allocate_pilots, estimate_ue, random_pilots, true_scsi, uplink_observe, AngleMethod, EstimatorConfig, PilotPlan,
    ScsiSource, UeEstimate,
};
use crate::linalg::CMat;
use crate::precoder::{
    alternating_design_mm, alternating_design_sm, baseline_coefficients, calibrate_noise_variance, spectral_efficiency,
    zf_all, DesignInit, DesignOptions, EmPrecoder, PrecoderProblem, PrecoderSolution,
};
use crate::sphharm::BaselinePattern;

/// Estimator variants compared in estimation sweeps.
pub const ESTIMATION_SCHEMES: [&str; 4] = ["esprit", "dd-omp", "ad-omp", "perfect-scsi"];

/// Transmission schemes compared in precoding sweeps.
pub const PRECODING_SCHEMES: [&str; 5] = ["tm-dipole", "tm-38901", "tm-downtilt", "rm-sm", "rm-mm"];

fn estimator_for(scheme: &str) -> (ScsiSource, AngleMethod) {
    match scheme {
        "dd-omp" => (ScsiSource::DdOmp, AngleMethod::Esprit),
        "ad-omp" => (ScsiSource::Esprit, AngleMethod::AdOmp),
        "perfect-scsi" => (ScsiSource::Perfect, AngleMethod::Esprit),
        _ => (ScsiSource::Esprit, AngleMethod::Esprit),
    }
}

fn selected<'a>(cfg: &ExperimentConfig, all: &'a [&'a str]) -> Result<Vec<&'a str>> {
    if let Some(bad) = cfg.schemes.iter().find(|s| !all.contains(&s.as_str())) {
        return Err(Error::Config(format!("unknown scheme '{bad}'; expected one of {}", all.join(", "))));
    }
    Ok(all.iter().copied().filter(|s| cfg.schemes.is_empty() || cfg.schemes.iter().any(|x| x == s)).collect())
}

struct TrialChannel {
    geom: ArrayGeometry,
    sys: SystemConfig,
    specs: Vec<UeChannelSpec>,
    truth: Vec<UeEcsi>,
}

fn draw_channel(cfg: &ExperimentConfig, seed: u64) -> Result<TrialChannel> {
    let geom = cfg.geometry()?;
    let sys = cfg.system()?;
    let specs = generate_paths(derive_seed(seed, 0), &cfg.path_statistics(), cfg.users)?;
    let freqs = sys.frequencies();
    let truth = specs.iter().map(|s| build_ecsi(s, &geom, cfg.k, &freqs)).collect::<Result<_>>()?;
    Ok(TrialChannel { geom, sys, specs, truth })
}

/// Uniform-comb and random pilot plans sharing one receive-pattern schedule.
fn pilot_plans(cfg: &ExperimentConfig, seed: u64) -> Result<(PilotPlan, PilotPlan)> {
    let uniform = PilotPlan::new(allocate_pilots(cfg.subcarriers, cfg.users, cfg.pilots)?, cfg.time_symbols, cfg.k, derive_seed(seed, 1))?;
    let random = PilotPlan::with_patterns(
        random_pilots(cfg.subcarriers, cfg.users, cfg.pilots, derive_seed(seed, 2))?,
        uniform.patterns.clone(),
        derive_seed(seed, 3),
    )?;
    Ok((uniform, random))
}

fn flag_list(flags: &[String]) -> String {
    let mut f = flags.to_vec();
    f.sort();
    f.dedup();
    f.join(";")
}

fn estimate_flags(est: &UeEstimate, out: &mut Vec<String>) {
    let f = est.flags;
    if f.low_confidence_order {
        out.push("low_confidence_order".into());
    }
    if f.order_reduced {
        out.push("order_reduced".into());
    }
    if f.wrapped_delays > 0 {
        out.push("wrapped_delay".into());
    }
    if f.clamped_angles > 0 {
        out.push("clamped_angle".into());
    }
    if f.ambiguous_pairing {
        out.push("ambiguous_pairing".into());
    }
}

/// Estimates every user's channel with one estimator variant.
fn estimate_all(
    ch: &TrialChannel,
    plan: &PilotPlan,
    cfg: &ExperimentConfig,
    est_cfg: &EstimatorConfig,
    seed: u64,
    stream: u64,
) -> Result<Vec<UeEstimate>> {
    (0..cfg.users)
        .map(|u| {
            let obs = uplink_observe(&ch.truth[u], plan, u, cfg.snr_uplink_db, derive_seed(seed, stream + u as u64))?;
            estimate_ue(&obs, plan, &ch.geom, &ch.sys, &ch.specs[u], &ch.truth[u], est_cfg)
        })
        .collect()
}

/// All estimation schemes on one channel draw.
pub fn estimation_trial(cfg: &ExperimentConfig, point: usize, value: Option<f64>, trial: usize, seed: u64) -> Vec<MetricsRecord> {
    let schemes = match selected(cfg, &ESTIMATION_SCHEMES) {
        Ok(s) => s,
        Err(e) => {
            let mut r = MetricsRecord::new(point, value, trial, seed, "all", "");
            r.error = Some(e.to_string());
            return vec![r];
        }
    };
    let setup = draw_channel(cfg, seed).and_then(|ch| Ok((pilot_plans(cfg, seed)?, ch)));
    let ((uniform, random), ch) = match setup {
        Ok(x) => x,
        Err(e) => {
            return schemes
                .iter()
                .map(|s| {
                    let mut r = MetricsRecord::new(point, value, trial, seed, s, "");
                    r.error = Some(e.to_string());
                    r
                })
                .collect()
        }
    };
    let truth_scsi: Vec<CMat> = ch.truth.iter().flat_map(|t| true_scsi(t, &uniform.patterns)).collect();
    schemes
        .iter()
        .map(|&scheme| {
            let mut rec = MetricsRecord::new(point, value, trial, seed, scheme, "");
            let (scsi, angles) = estimator_for(scheme);
            let est_cfg = EstimatorConfig { scsi, angles, order: cfg.order_selection(), ..EstimatorConfig::default() };
            let (plan, stream) = if scsi == ScsiSource::DdOmp { (&random, 2000) } else { (&uniform, 1000) };
            let result = estimate_all(&ch, plan, cfg, &est_cfg, seed, stream).and_then(|ests| {
                let est_scsi: Vec<CMat> = ests.iter().flat_map(|e| e.scsi.iter().cloned()).collect();
                let est_ecsi: Vec<UeEcsi> = ests.iter().map(|e| e.ecsi.clone()).collect();
                let mut flags = Vec::new();
                ests.iter().for_each(|e| estimate_flags(e, &mut flags));
                // The perfect-sCSI variant is exact by construction; its sCSI error is not a result.
                let s = if scsi == ScsiSource::Perfect { None } else { Some(nmse_s(&truth_scsi, &est_scsi)?) };
                Ok((s, nmse_e(&ch.truth, &est_ecsi)?, flags))
            });
            match result {
                Ok((s, e, flags)) => {
                    rec = rec.with_nmse(s, Some(e));
                    rec.flags = flag_list(&flags);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect()
}

fn design_options(cfg: &ExperimentConfig) -> DesignOptions {
    DesignOptions { eta_th: cfg.eta_th, iota_max: cfg.iota_max, ..DesignOptions::default() }
}

fn trace_flags(sol: &PrecoderSolution, flags: &mut Vec<String>) {
    if sol.se_trace.windows(2).any(|w| w[1] < w[0]) {
        flags.push("se_trace_decreased".into());
    }
    if sol.stagnated {
        flags.push("stagnated".into());
    }
}

/// Single- and multi-mode designs on `problem`; multi mode starts from the single-mode optimum.
fn rm_designs(problem: &PrecoderProblem, cfg: &ExperimentConfig, need_mm: bool) -> Result<(PrecoderSolution, Option<PrecoderSolution>)> {
    let opts = design_options(cfg);
    let sm = alternating_design_sm(problem, &opts)?;
    let mm = if need_mm {
        let warm = DesignOptions { init: DesignInit::Coefficients(sm.em.clone()), ..opts };
        Some(alternating_design_mm(problem, &warm)?)
    } else {
        None
    };
    Ok((sm, mm))
}

/// One channel draw, all selected schemes, on perfect and (optionally) estimated eCSI.
///
/// Designs run on the given eCSI; SE is always evaluated on the true channel
/// with the designed EM and digital precoders.
pub fn precoding_trial(cfg: &ExperimentConfig, point: usize, value: Option<f64>, trial: usize, seed: u64) -> Vec<MetricsRecord> {
    let schemes = match selected(cfg, &PRECODING_SCHEMES) {
        Ok(s) => s,
        Err(e) => {
            let mut r = MetricsRecord::new(point, value, trial, seed, "all", "");
            r.error = Some(e.to_string());
            return vec![r];
        }
    };
    let mut sources = vec!["perfect"];
    if cfg.estimated_ecsi {
        sources.push("estimated");
    }
    let fail = |source: &str, e: &Error| -> Vec<MetricsRecord> {
        schemes
            .iter()
            .map(|s| {
                let mut r = MetricsRecord::new(point, value, trial, seed, s, source);
                r.error = Some(e.to_string());
                r
            })
            .collect()
    };
    let setup = draw_channel(cfg, seed).and_then(|ch| {
        let ecsi = EcsiTensor::new(ch.truth.clone())?;
        let sigma2 = calibrate_noise_variance(&ecsi, cfg.power, cfg.snr_downlink_db)?;
        Ok((ch, ecsi, sigma2))
    });
    let (ch, truth, sigma2) = match setup {
        Ok(x) => x,
        Err(e) => return sources.iter().flat_map(|s| fail(s, &e)).collect(),
    };
    let mut out = Vec::new();
    for source in sources {
        let prepared = (|| -> Result<(EcsiTensor, Option<f64>, Vec<String>)> {
            if source == "perfect" {
                return Ok((truth.clone(), None, Vec::new()));
            }
            let (plan, _) = pilot_plans(cfg, seed)?;
            let est_cfg = EstimatorConfig { order: cfg.order_selection(), ..EstimatorConfig::default() };
            let ests = estimate_all(&ch, &plan, cfg, &est_cfg, seed, 1000)?;
            let mut flags = Vec::new();
            ests.iter().for_each(|e| estimate_flags(e, &mut flags));
            let ecsi: Vec<UeEcsi> = ests.into_iter().map(|e| e.ecsi).collect();
            let err = nmse_e(&ch.truth, &ecsi)?;
            Ok((EcsiTensor::new(ecsi)?, Some(err), flags))
        })();
        let (ecsi, nmse, est_flags) = match prepared {
            Ok(x) => x,
            Err(e) => {
                out.extend(fail(source, &e));
                continue;
            }
        };
        let evaluate = || -> Result<Vec<MetricsRecord>> {
            let true_problem = PrecoderProblem::new(&truth, sigma2, cfg.power)?;
            let problem = PrecoderProblem::new(&ecsi, sigma2, cfg.power)?;
            let need_rm = schemes.iter().any(|s| s.starts_with("rm-"));
            let rm = if need_rm { Some(rm_designs(&problem, cfg, schemes.contains(&"rm-mm"))?) } else { None };
            schemes
                .iter()
                .map(|&scheme| {
                    let mut rec = MetricsRecord::new(point, value, trial, seed, scheme, source).with_nmse(None, nmse);
                    let mut flags = est_flags.clone();
                    let se = match scheme {
                        "rm-sm" | "rm-mm" => {
                            let (sm, mm) = rm.as_ref().expect("designs computed when requested");
                            let sol = if scheme == "rm-sm" { sm } else { mm.as_ref().expect("multi-mode requested") };
                            trace_flags(sol, &mut flags);
                            spectral_efficiency(&true_problem, &sol.em, &sol.digital)?
                        }
                        tm => {
                            let pattern = match tm {
                                "tm-dipole" => BaselinePattern::Dipole,
                                "tm-38901" => BaselinePattern::Tgpp38901,
                                _ => BaselinePattern::Downtilt,
                            };
                            let em = EmPrecoder::Single(baseline_coefficients(pattern, cfg.k)?);
                            let w = zf_all(&problem, &em)?;
                            spectral_efficiency(&true_problem, &em, &w)?
                        }
                    };
                    rec.se = Some(se);
                    rec.flags = flag_list(&flags);
                    Ok(rec)
                })
                .collect()
        };
        match evaluate() {
            Ok(rows) => out.extend(rows),
            Err(e) => out.extend(fail(source, &e)),
        }
    }
    out
}

type TrialFn = fn(&ExperimentConfig, usize, Option<f64>, usize, u64) -> Vec<MetricsRecord>;

fn run(cfg: &ExperimentConfig, trial_fn: TrialFn) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let points: Vec<(usize, Option<f64>, ExperimentConfig)> = cfg
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, v)| Ok((i, v, cfg.at(v)?)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let rows: Vec<Vec<MetricsRecord>> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let (point, value, point_cfg) = &points[p];
            let start = Instant::now();
            let mut rows = trial_fn(point_cfg, *point, *value, t, trial_seed(cfg.seed, t as u64));
            let elapsed = start.elapsed().as_secs_f64();
            rows.iter_mut().for_each(|r| r.wall_time = elapsed);
            rows
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// One row per (sweep point, trial, estimator).
pub fn run_estimation_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    run(cfg, estimation_trial)
}

/// One row per (sweep point, trial, eCSI source, scheme).
pub fn run_precoding_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    run(cfg, precoding_trial)
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    match cfg.experiment {
        Experiment::Estimation => run_estimation_sweep(cfg),
        Experiment::Precoding => run_precoding_sweep(cfg),
    }
}

/// Estimates of every user for one draw (trial 0 of `cfg.seed`), with the
/// ESPRIT pipeline, alongside the true eCSI.
pub fn estimate_once(cfg: &ExperimentConfig) -> Result<(Vec<UeEstimate>, Vec<UeEcsi>)> {
    cfg.validate()?;
    let seed = trial_seed(cfg.seed, 0);
    let ch = draw_channel(cfg, seed)?;
    let (plan, _) = pilot_plans(cfg, seed)?;
    let est_cfg = EstimatorConfig { order: cfg.order_selection(), ..EstimatorConfig::default() };
    let ests = estimate_all(&ch, &plan, cfg, &est_cfg, seed, 1000)?;
    Ok((ests, ch.truth))
}

/// Single- and multi-mode designs on the perfect eCSI of one draw (trial 0).
pub fn precode_once(cfg: &ExperimentConfig) -> Result<(PrecoderSolution, PrecoderSolution)> {
    let mut c = cfg.clone();
    c.experiment = Experiment::Precoding;
    c.estimated_ecsi = false;
    c.validate()?;
    let ch = draw_channel(&c, trial_seed(c.seed, 0))?;
    let ecsi = EcsiTensor::new(ch.truth)?;
    let sigma2 = calibrate_noise_variance(&ecsi, c.power, c.snr_downlink_db)?;
    let problem = PrecoderProblem::new(&ecsi, sigma2, c.power)?;
    let (sm, mm) = rm_designs(&problem, &c, true)?;
    Ok((sm, mm.expect("multi-mode requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Sweep, SweepVariable};

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            m_y: 4,
            m_z: 4,
            subcarriers: 64,
            users: 2,
            paths: 3,
            k: 16,
            pilots: 12,
            time_symbols: 2,
            trials: 3,
            iota_max: 20,
            ..ExperimentConfig::desk()
        }
    }

    #[test]
    fn estimation_sweep_is_deterministic_and_complete() {
        let mut cfg = small();
        cfg.sweep = Some(Sweep { variable: SweepVariable::SnrUplinkDb, values: vec![5.0, 25.0] });
        let a = run_estimation_sweep(&cfg).unwrap();
        assert_eq!(a.len(), 2 * 3 * ESTIMATION_SCHEMES.len());
        assert!(a.iter().all(|r| r.error.is_none()), "{:?}", a.iter().find(|r| r.error.is_some()));
        let b = run_estimation_sweep(&cfg).unwrap();
        let strip = |v: &[MetricsRecord]| v.iter().map(|r| (r.scheme.clone(), r.nmse_s, r.nmse_e, r.seed)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        for r in a.iter().filter(|r| r.scheme == "perfect-scsi") {
            assert_eq!(r.nmse_s, None);
            assert!(r.nmse_e.unwrap() < 1e-6);
        }
    }

    #[test]
    fn trials_do_not_depend_on_execution_order() {
        let cfg = small();
        let all = run_estimation_sweep(&cfg).unwrap();
        let lone = estimation_trial(&cfg, 0, None, 2, trial_seed(cfg.seed, 2));
        let from_sweep: Vec<_> = all.iter().filter(|r| r.trial == 2).cloned().collect();
        let strip = |v: &[MetricsRecord]| v.iter().map(|r| (r.nmse_s, r.nmse_e)).collect::<Vec<_>>();
        assert_eq!(strip(&lone), strip(&from_sweep));
    }

    #[test]
    fn precoding_trial_reports_every_scheme() {
        let mut cfg = small();
        cfg.experiment = Experiment::Precoding;
        cfg.trials = 1;
        let rows = run_precoding_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * PRECODING_SCHEMES.len());
        assert!(rows.iter().all(|r| r.error.is_none() && r.se.unwrap() >= 0.0), "{rows:?}");
        let se = |s: &str, src: &str| rows.iter().find(|r| r.scheme == s && r.ecsi == src).unwrap().se.unwrap();
        assert!(se("rm-mm", "perfect") >= se("rm-sm", "perfect") - 1e-9);
        assert!(rows.iter().all(|r| !r.flags.contains("se_trace_decreased")));
    }

    #[test]
    fn scheme_filter_and_unknown_scheme() {
        let mut cfg = small();
        cfg.trials = 1;
        cfg.schemes = vec!["esprit".into()];
        let rows = run_estimation_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        cfg.schemes = vec!["nope".into()];
        let rows = run_estimation_sweep(&cfg).unwrap();
        assert!(rows[0].error.as_deref().unwrap().contains("unknown scheme"));
    }
}
