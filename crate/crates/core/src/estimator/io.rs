use std::path::Path;

use super::UeEstimate;
use crate::error::{io_err, Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse(format!("{}: {e}", path.display()))
}

/// Writes `delays.csv`, `angles.csv` and `gains.csv` into `dir`, plus the
/// flattened `ecsi.csv` (`q̂_{m,g}` entries) when `include_ecsi` is set.
pub fn write_estimate(dir: &Path, est: &UeEstimate, include_ecsi: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let p = dir.join("delays.csv");
    let mut w = writer(&p)?;
    w.write_record(["path", "delay_s"]).map_err(csv_err(&p))?;
    for (i, d) in est.delays.iter().enumerate() {
        w.write_record([i.to_string(), d.to_string()]).map_err(csv_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("angles.csv");
    let mut w = writer(&p)?;
    w.write_record(["path", "mu", "nu", "theta", "phi"]).map_err(csv_err(&p))?;
    let a = &est.angles;
    for i in 0..a.directions.len() {
        let d = a.directions[i];
        w.write_record([i.to_string(), a.mu[i].to_string(), a.nu[i].to_string(), d.theta.to_string(), d.phi.to_string()])
            .map_err(csv_err(&p))?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = dir.join("gains.csv");
    let mut w = writer(&p)?;
    w.write_record(["subcarrier", "path", "re", "im"]).map_err(csv_err(&p))?;
    for g in 0..est.gains.ncols() {
        for i in 0..est.gains.nrows() {
            let v = est.gains[(i, g)];
            w.write_record([g.to_string(), i.to_string(), v.re.to_string(), v.im.to_string()]).map_err(csv_err(&p))?;
        }
    }
    w.flush().map_err(io_err(&p))?;

    if include_ecsi {
        let p = dir.join("ecsi.csv");
        let mut w = writer(&p)?;
        w.write_record(["antenna", "subcarrier", "k", "re", "im"]).map_err(csv_err(&p))?;
        for m in 0..est.ecsi.antennas() {
            for g in 0..est.ecsi.subcarriers() {
                for (k, v) in est.ecsi.q(m, g).iter().enumerate() {
                    w.write_record([m.to_string(), g.to_string(), k.to_string(), v.re.to_string(), v.im.to_string()])
                        .map_err(csv_err(&p))?;
                }
            }
        }
        w.flush().map_err(io_err(&p))?;
    }
    Ok(())
}
