use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, MetricsRecord};
use crate::error::{io_err, Error, Result};
use crate::precoder::EmPrecoder;
use crate::sphharm::{basis_matrix, quadrature_grid};

const RESULT_COLUMNS: [&str; 13] = [
    "point", "value", "trial", "seed", "scheme", "ecsi", "nmse_s", "nmse_s_db", "nmse_e", "nmse_e_db", "se", "flags", "error",
];

/// Sample mean, sample standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stat {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, stderr: std / (n as f64).sqrt(), count: n })
    }
}

/// Aggregates of one scheme at one sweep point over successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub point: usize,
    pub value: Option<f64>,
    pub scheme: String,
    pub ecsi: String,
    pub nmse_s: Option<Stat>,
    pub nmse_s_db: Option<Stat>,
    pub nmse_e: Option<Stat>,
    pub nmse_e_db: Option<Stat>,
    pub se: Option<Stat>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub variable: Option<String>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    /// Groups rows by (point, scheme, eCSI source) in first-seen order; rows
    /// carrying an error only count as failures.
    pub fn from_records(records: &[MetricsRecord], config: &ExperimentConfig) -> Self {
        let mut index: HashMap<(usize, &str, &str), usize> = HashMap::new();
        let mut groups: Vec<Vec<&MetricsRecord>> = Vec::new();
        for r in records {
            let i = *index.entry((r.point, r.scheme.as_str(), r.ecsi.as_str())).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[i].push(r);
        }
        let rows = groups
            .into_iter()
            .map(|g| {
                let ok: Vec<&MetricsRecord> = g.iter().copied().filter(|r| r.error.is_none()).collect();
                let stat = |f: fn(&MetricsRecord) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
                SummaryRow {
                    point: g[0].point,
                    value: g[0].value,
                    scheme: g[0].scheme.clone(),
                    ecsi: g[0].ecsi.clone(),
                    nmse_s: stat(|r| r.nmse_s),
                    nmse_s_db: stat(|r| r.nmse_s_db),
                    nmse_e: stat(|r| r.nmse_e),
                    nmse_e_db: stat(|r| r.nmse_e_db),
                    se: stat(|r| r.se),
                    failures: g.len() - ok.len(),
                }
            })
            .collect();
        Self {
            scenario: config.scenario.clone(),
            variable: config.sweep.as_ref().map(|s| s.variable.to_string()),
            rows,
        }
    }

    /// Row for `scheme` / `ecsi` at sweep point `point`.
    pub fn row(&self, point: usize, scheme: &str, ecsi: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.point == point && r.scheme == scheme && r.ecsi == ecsi)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Writes `results.csv`, `summary.json` and the `config.toml` snapshot into `dir`.
///
/// The table always has a header, even with no rows.
pub fn emit_results(records: &[MetricsRecord], config: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("results.csv");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(RESULT_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;

    let summary = Summary::from_records(records, config);
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;

    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()?).map_err(io_err(&path))?;
    Ok(summary)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct TimingRow<'a> {
    point: usize,
    trial: usize,
    scheme: &'a str,
    ecsi: &'a str,
    wall_time_s: f64,
}

/// Per-row trial wall times, kept apart from `results.csv` so that file is reproducible.
pub fn write_timing(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(TimingRow { point: r.point, trial: r.trial, scheme: &r.scheme, ecsi: &r.ecsi, wall_time_s: r.wall_time })
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Serialize)]
struct PatternSample {
    block: usize,
    theta: f64,
    phi: f64,
    gain: f64,
}

/// Samples each EM pattern (one block for a shared pattern, one per antenna
/// otherwise) on an `n_theta × n_phi` quadrature grid.
pub fn export_pattern_samples(em: &EmPrecoder, grid: (usize, usize), path: &Path) -> Result<()> {
    let samples = quadrature_grid(grid.0, grid.1)?;
    let basis = basis_matrix(em.k(), &samples.directions);
    let blocks = match em {
        EmPrecoder::Single(_) => 1,
        EmPrecoder::Multi(l) => l.ncols(),
    };
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for b in 0..blocks {
        let gains = &basis * em.alpha(b);
        for (d, g) in samples.directions.iter().zip(gains.iter()) {
            w.serialize(PatternSample { block: b, theta: d.theta, phi: d.phi, gain: *g }).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
