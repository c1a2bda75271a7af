use std::path::Path;

use serde::Serialize;

use super::{EmPrecoder, PrecoderSolution};
use crate::error::{io_err, Error, Result};

#[derive(Serialize)]
struct AlphaRow {
    antenna: usize,
    k: usize,
    alpha: f64,
}

#[derive(Serialize)]
struct DigitalRow {
    subcarrier: usize,
    antenna: usize,
    user: usize,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    se: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `alpha.csv` (one block per antenna; a single block in single mode),
/// `digital.csv` (`W_g` entries) and `se_trace.csv` into `dir`.
pub fn write_solution(dir: &Path, solution: &PrecoderSolution) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let blocks: Vec<Vec<f64>> = match &solution.em {
        EmPrecoder::Single(a) => vec![a.iter().copied().collect()],
        EmPrecoder::Multi(l) => l.column_iter().map(|c| c.iter().copied().collect()).collect(),
    };
    write_rows(
        &dir.join("alpha.csv"),
        blocks.iter().enumerate().flat_map(|(m, b)| {
            b.iter().enumerate().map(move |(k, a)| AlphaRow { antenna: m, k: k + 1, alpha: *a })
        }),
    )?;
    write_rows(
        &dir.join("digital.csv"),
        solution.digital.iter().enumerate().flat_map(|(g, w)| {
            (0..w.ncols()).flat_map(move |u| {
                (0..w.nrows()).map(move |m| DigitalRow { subcarrier: g, antenna: m, user: u, re: w[(m, u)].re, im: w[(m, u)].im })
            })
        }),
    )?;
    write_rows(
        &dir.join("se_trace.csv"),
        solution.se_trace.iter().enumerate().map(|(i, se)| TraceRow { iteration: i, se: *se }),
    )
}
