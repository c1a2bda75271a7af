use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{Path, UeChannelSpec};
use crate::error::{io_err, Error, Result};
use crate::linalg::C64;
use crate::sphharm::SphericalDirection;

#[derive(Serialize, Deserialize)]
struct PathRow {
    ue: usize,
    path: usize,
    gain_re: f64,
    gain_im: f64,
    delay: f64,
    aod_theta: f64,
    aod_phi: f64,
    aoa_theta: f64,
    aoa_phi: f64,
    pos_x: f64,
    pos_y: f64,
    pos_z: f64,
}

/// One row per path; UE positions repeat on each of their rows.
pub fn write_channel_csv(path: &FsPath, specs: &[UeChannelSpec]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for (ue, spec) in specs.iter().enumerate() {
        for (i, p) in spec.paths.iter().enumerate() {
            w.serialize(PathRow {
                ue,
                path: i,
                gain_re: p.gain.re,
                gain_im: p.gain.im,
                delay: p.delay,
                aod_theta: p.aod.theta,
                aod_phi: p.aod.phi,
                aoa_theta: p.aoa.theta,
                aoa_phi: p.aoa.phi,
                pos_x: spec.position[0],
                pos_y: spec.position[1],
                pos_z: spec.position[2],
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads rows written by [`write_channel_csv`]. UEs must appear in order.
pub fn read_channel_csv(path: &FsPath) -> Result<Vec<UeChannelSpec>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let mut specs: Vec<UeChannelSpec> = Vec::new();
    for row in r.deserialize::<PathRow>() {
        let row = row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let p = Path {
            gain: C64::new(row.gain_re, row.gain_im),
            delay: row.delay,
            aod: SphericalDirection::new(row.aod_theta, row.aod_phi)?,
            aoa: SphericalDirection::new(row.aoa_theta, row.aoa_phi)?,
        };
        match row.ue {
            u if u + 1 == specs.len() => specs[u].paths.push(p),
            u if u == specs.len() => {
                let mut spec = UeChannelSpec::new(vec![p])?;
                spec.position = [row.pos_x, row.pos_y, row.pos_z];
                specs.push(spec);
            }
            u => return Err(Error::Parse(format!("{}: UE {u} out of order", path.display()))),
        }
    }
    Ok(specs)
}
