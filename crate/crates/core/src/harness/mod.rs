//! Seeded Monte-Carlo experiment driver: configuration, metrics, estimation and
//! precoding sweeps, and result files.
//!
//! Trials are independent jobs run on the rayon pool. Each draws every random
//! quantity from `trial_seed(base, trial)` and derived streams, so tables do not
//! depend on thread count or execution order. The same trial index reuses its
//! channel at every sweep point (common random numbers), which keeps trend
//! comparisons between points tight.

mod config;
mod output;
mod sweep;

pub use config::{Experiment, ExperimentConfig, ModelOrderMode, Scale, Sweep, SweepVariable};
pub use output::{emit_results, export_pattern_samples, read_summary, write_timing, Summary, SummaryRow, Stat};
pub use sweep::{
    estimate_once, estimation_trial, precode_once, precoding_trial, run_estimation_sweep, run_precoding_sweep, run_sweep, ESTIMATION_SCHEMES,
    PRECODING_SCHEMES,
};

use serde::{Deserialize, Serialize};

use crate::channel::UeEcsi;
use crate::error::{domain, Error, Result};
use crate::linalg::{energy, CMat};

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Independent sub-stream `stream` of a trial seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// `Σ|ĥ − h|² / Σ|h|²` over matching blocks.
pub fn nmse_s(truth: &[CMat], estimate: &[CMat]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.iter().zip(estimate).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Dimension("sCSI estimate and truth differ in shape".into()));
    }
    let power: f64 = truth.iter().map(energy).sum();
    if !(power > 0.0) {
        return domain("true sCSI has zero energy");
    }
    let err: f64 = truth.iter().zip(estimate).map(|(a, b)| energy(&(b - a))).sum();
    Ok(err / power)
}

/// `Σ_{u,m,g}‖q̂ − q‖² / Σ‖q‖²` over users.
pub fn nmse_e(truth: &[UeEcsi], estimate: &[UeEcsi]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::Dimension("eCSI estimate and truth differ in user count".into()));
    }
    let power: f64 = truth.iter().map(UeEcsi::energy).sum();
    if !(power > 0.0) {
        return domain("true eCSI has zero energy");
    }
    let mut err = 0.0;
    for (t, e) in truth.iter().zip(estimate) {
        err += t.distance_sq(e)?;
    }
    Ok(err / power)
}

/// `10·log10(x)`.
pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// One row of a results table: one scheme in one trial at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub point: usize,
    pub value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub scheme: String,
    /// `perfect` or `estimated` eCSI for precoding rows; empty for estimation rows.
    pub ecsi: String,
    pub nmse_s: Option<f64>,
    pub nmse_s_db: Option<f64>,
    pub nmse_e: Option<f64>,
    pub nmse_e_db: Option<f64>,
    pub se: Option<f64>,
    /// Semicolon-separated warnings (order reduced, clamped angles, …).
    pub flags: String,
    pub error: Option<String>,
    /// Wall time of the whole trial; kept out of the data file.
    #[serde(skip)]
    pub wall_time: f64,
}

impl MetricsRecord {
    pub(crate) fn new(point: usize, value: Option<f64>, trial: usize, seed: u64, scheme: &str, ecsi: &str) -> Self {
        Self {
            point,
            value,
            trial,
            seed,
            scheme: scheme.to_string(),
            ecsi: ecsi.to_string(),
            nmse_s: None,
            nmse_s_db: None,
            nmse_e: None,
            nmse_e_db: None,
            se: None,
            flags: String::new(),
            error: None,
            wall_time: 0.0,
        }
    }

    pub(crate) fn with_nmse(mut self, s: Option<f64>, e: Option<f64>) -> Self {
        self.nmse_s = s;
        self.nmse_s_db = s.map(db);
        self.nmse_e = e;
        self.nmse_e_db = e.map(db);
        self
    }
}
