//! Delay-domain stage: model order, 1D-ESPRIT, LS path gains and the DD-OMP baseline.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{cis, eig_general, least_squares, signal_subspace, sorted_svd, CMat};

/// Eigenvalue-threshold rule for the number of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOrderRule {
    /// Eigenvalues above `factor × noise floor` count as signal.
    pub factor: f64,
    /// Fraction of the smallest eigenvalues averaged into the noise floor.
    pub floor_fraction: f64,
}

impl Default for ModelOrderRule {
    fn default() -> Self {
        Self { factor: 10.0, floor_fraction: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOrder {
    pub order: usize,
    /// No eigenvalue cleared the threshold, or the count had to be clamped.
    pub low_confidence: bool,
    /// Sample-covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Counts dominant eigenvalues of `Y Yᴴ / N` for a `rows × N` snapshot matrix.
///
/// The result lies in `[1, rows − 1]`. The noise floor never drops below
/// `1e−12 × λ_max`, so noiseless data is not split by round-off.
pub fn estimate_model_order(y: &CMat, rule: &ModelOrderRule) -> Result<ModelOrder> {
    let rows = y.nrows();
    if rows < 2 || y.ncols() == 0 {
        return domain("model order needs at least two rows and one snapshot");
    }
    if !(rule.factor > 1.0) || !(rule.floor_fraction > 0.0 && rule.floor_fraction <= 1.0) {
        return domain("model-order rule needs factor > 1 and floor fraction in (0, 1]");
    }
    let (sv, _) = sorted_svd(y);
    let n = y.ncols() as f64;
    let mut eigenvalues: Vec<f64> = sv.iter().map(|s| s * s / n).collect();
    eigenvalues.resize(rows, 0.0);
    let tail = ((rows as f64 * rule.floor_fraction).ceil() as usize).clamp(1, rows);
    let floor = eigenvalues[rows - tail..].iter().sum::<f64>() / tail as f64;
    let floor = floor.max(eigenvalues[0] * 1e-12);
    let count = eigenvalues.iter().filter(|&&e| e > rule.factor * floor).count();
    let order = count.clamp(1, rows - 1);
    Ok(ModelOrder { order, low_confidence: count == 0 || count != order, eigenvalues })
}

/// Delays and gains from the comb samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate {
    /// Seconds, in the principal range `[−T/2, T/2)` with `T = 1/(comb spacing)`.
    pub delays: Vec<f64>,
    /// `L × N` gains referred to absolute subcarrier frequency.
    pub gains: CMat,
    /// Number of delays that came out negative (aliased or noise-pushed below zero).
    pub wrapped: usize,
}

/// Delay estimates from the rotational invariance of a uniform comb.
///
/// `y` is `J × N` (comb sample × snapshot), `spacing` the comb pitch in Hz. Row
/// `j` carries `Σ_i x_i e^{−j2πτ_i f_j}`, so adjacent rows differ by
/// `e^{−j2πτ_i·spacing}`. Returns the delays and how many were negative.
pub fn esprit_1d(y: &CMat, order: usize, spacing: f64) -> Result<(Vec<f64>, usize)> {
    let j = y.nrows();
    if order == 0 || j < order + 1 {
        return domain(format!("1D-ESPRIT needs J ≥ L + 1, got J = {j}, L = {order}"));
    }
    if !(spacing > 0.0) {
        return domain("comb spacing must be positive");
    }
    let us = signal_subspace(y, order)?;
    let upper = us.rows(0, j - 1).into_owned();
    let lower = us.rows(1, j - 1).into_owned();
    let phi = least_squares(&upper, &lower, 1e16)?;
    let (values, _) = eig_general(&phi)?;
    let period = 1.0 / spacing;
    let mut wrapped = 0;
    let mut delays: Vec<f64> = values
        .iter()
        .map(|v| {
            let tau = -v.arg() / (2.0 * PI) * period;
            let tau = if tau >= period / 2.0 { tau - period } else { tau };
            if tau < 0.0 {
                wrapped += 1;
            }
            tau
        })
        .collect();
    delays.sort_by(f64::total_cmp);
    Ok((delays, wrapped))
}

/// `[E]_{j,i} = e^{−j2πτ_i f_j}`.
fn delay_matrix(delays: &[f64], freqs: &[f64]) -> CMat {
    CMat::from_fn(freqs.len(), delays.len(), |j, i| cis(-2.0 * PI * delays[i] * freqs[j]))
}

/// `X̂ = (EᴴE)^{−1}EᴴY` for the comb frequencies `freqs`.
///
/// Fails when `EᴴE` has condition above `max_condition`; reduce the model order.
pub fn ls_path_gains(delays: &[f64], freqs: &[f64], y: &CMat, max_condition: f64) -> Result<CMat> {
    if freqs.len() != y.nrows() {
        return Err(Error::Dimension(format!("{} frequencies for {} comb rows", freqs.len(), y.nrows())));
    }
    let e = delay_matrix(delays, freqs);
    least_squares(&e, y, max_condition).map_err(|err| match err {
        Error::RankDeficient(msg) => Error::RankDeficient(format!("{msg}; try a smaller model order")),
        other => other,
    })
}

/// `ĥ(f) = Σ_i x̂_i e^{−j2πτ̂_i f}` on every frequency (`len(freqs) × N`).
pub fn reconstruct_scsi(delays: &[f64], gains: &CMat, freqs: &[f64]) -> CMat {
    delay_matrix(delays, freqs) * gains
}

/// Simultaneous OMP over atoms `a_n = e^{−j2πτ_n f}`, followed by an LS refit.
///
/// The dictionary covers `[0, 1/Δf)` on `oversampling·G` delays. Returns the
/// selected delays (ascending) and their `L × N` gains. Selection stops early if
/// a new atom makes the refit ill-conditioned.
pub fn dd_omp(
    y: &CMat,
    freqs: &[f64],
    subcarrier_spacing: f64,
    subcarriers: usize,
    oversampling: usize,
    sparsity: usize,
) -> Result<DelayEstimate> {
    if oversampling == 0 {
        return domain("dictionary oversampling must be at least 1");
    }
    if sparsity == 0 || sparsity > y.nrows() {
        return domain(format!("sparsity {sparsity} must lie in [1, J = {}]", y.nrows()));
    }
    let atoms = oversampling * subcarriers;
    let grid: Vec<f64> = (0..atoms).map(|n| n as f64 / (atoms as f64 * subcarrier_spacing)).collect();
    let dict = delay_matrix(&grid, freqs);
    let support = somp(&dict, y, sparsity)?;
    let mut delays: Vec<f64> = support.iter().map(|&n| grid[n]).collect();
    delays.sort_by(f64::total_cmp);
    let gains = ls_path_gains(&delays, freqs, y, 1e10)?;
    Ok(DelayEstimate { delays, gains, wrapped: 0 })
}

/// Simultaneous orthogonal matching pursuit: greedy support on the columns of
/// `dict` that best correlate with the residual across all snapshots.
pub(crate) fn somp(dict: &CMat, y: &CMat, sparsity: usize) -> Result<Vec<usize>> {
    if dict.nrows() != y.nrows() {
        return Err(Error::Dimension("dictionary and data rows differ".into()));
    }
    let norms: Vec<f64> = dict.column_iter().map(|c| c.norm()).collect();
    let adj = dict.adjoint();
    let mut support: Vec<usize> = Vec::with_capacity(sparsity);
    let mut residual = y.clone();
    for _ in 0..sparsity {
        let corr = &adj * &residual;
        let best = corr
            .row_iter()
            .enumerate()
            .filter(|(n, _)| !support.contains(n) && norms[*n] > 0.0)
            .map(|(n, row)| (n, row.norm_squared() / (norms[n] * norms[n])))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((n, score)) = best else { break };
        if !(score > 0.0) {
            break;
        }
        let mut trial = support.clone();
        trial.push(n);
        let a = CMat::from_fn(dict.nrows(), trial.len(), |r, c| dict[(r, trial[c])]);
        let Ok(x) = least_squares(&a, y, 1e10) else { break };
        residual = y - a * x;
        support = trial;
    }
    if support.is_empty() {
        return Err(Error::RankDeficient("OMP selected no atom".into()));
    }
    Ok(support)
}
