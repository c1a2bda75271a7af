use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{quadrature_grid, SphericalDirection};
use crate::error::Error;

/// Fixed element patterns used by conventional arrays. All are amplitude gains
/// with unit energy `∫ f² dΩ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselinePattern {
    Isotropic,
    /// Hertz dipole along z: `f ∝ sin θ`.
    Dipole,
    /// 3GPP TR 38.901 single-element pattern, boresight along +x.
    Tgpp38901,
    /// The 38.901 pattern with its vertical cut centred on θ = 102°.
    Downtilt,
}

impl BaselinePattern {
    pub const ALL: [BaselinePattern; 4] = [Self::Isotropic, Self::Dipole, Self::Tgpp38901, Self::Downtilt];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Isotropic => "isotropic",
            Self::Dipole => "dipole",
            Self::Tgpp38901 => "tgpp38901",
            Self::Downtilt => "downtilt",
        }
    }
}

impl fmt::Display for BaselinePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselinePattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" | "iso" => Ok(Self::Isotropic),
            "dipole" => Ok(Self::Dipole),
            "tgpp38901" | "38901" | "3gpp" | "3gpp38901" => Ok(Self::Tgpp38901),
            "downtilt" => Ok(Self::Downtilt),
            other => Err(Error::Domain(format!("unknown baseline pattern '{other}'"))),
        }
    }
}

/// 38.901 element directivity pattern in dB (without the 8 dBi peak gain).
fn tgpp_db(theta_deg: f64, phi_deg: f64, tilt_deg: f64) -> f64 {
    const BEAMWIDTH: f64 = 65.0;
    const SLA_V: f64 = 30.0;
    const A_MAX: f64 = 30.0;
    let vertical = -(12.0 * ((theta_deg - tilt_deg) / BEAMWIDTH).powi(2)).min(SLA_V);
    let horizontal = -(12.0 * (phi_deg / BEAMWIDTH).powi(2)).min(A_MAX);
    -(-(vertical + horizontal)).min(A_MAX)
}

fn tgpp_amplitude(dir: SphericalDirection, tilt_deg: f64) -> f64 {
    let db = tgpp_db(dir.theta.to_degrees(), dir.phi.to_degrees(), tilt_deg);
    10f64.powf(db / 20.0)
}

fn unnormalized(pattern: BaselinePattern, dir: SphericalDirection) -> f64 {
    match pattern {
        BaselinePattern::Isotropic => 1.0,
        BaselinePattern::Dipole => dir.theta.sin(),
        BaselinePattern::Tgpp38901 => tgpp_amplitude(dir, 90.0),
        BaselinePattern::Downtilt => tgpp_amplitude(dir, 102.0),
    }
}

fn energy_scale(pattern: BaselinePattern) -> f64 {
    static SCALES: OnceLock<[f64; 4]> = OnceLock::new();
    let scales = SCALES.get_or_init(|| {
        let grid = quadrature_grid(400, 800).expect("fixed grid size is valid");
        let mut out = [0.0; 4];
        for (slot, p) in out.iter_mut().zip(BaselinePattern::ALL) {
            *slot = match p {
                BaselinePattern::Isotropic => 1.0 / (4.0 * PI).sqrt(),
                BaselinePattern::Dipole => (3.0 / (8.0 * PI)).sqrt(),
                _ => {
                    let e: f64 = grid
                        .directions
                        .iter()
                        .zip(&grid.weights)
                        .map(|(d, w)| w * unnormalized(p, *d).powi(2))
                        .sum();
                    1.0 / e.sqrt()
                }
            };
        }
        out
    });
    let idx = BaselinePattern::ALL.iter().position(|p| *p == pattern).unwrap();
    scales[idx]
}

/// Unit-energy amplitude gain of a baseline pattern.
pub fn baseline_pattern(pattern: BaselinePattern, dir: SphericalDirection) -> f64 {
    energy_scale(pattern) * unnormalized(pattern, dir)
}
