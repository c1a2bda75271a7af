use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{ArrayGeometry, PathStatistics, SystemConfig};
use crate::error::{io_err, Error, Result};
use crate::estimator::{allocate_pilots, ModelOrderRule, OrderSelection};

/// Which Monte-Carlo experiment a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Estimation,
    Precoding,
}

/// Parameter varied across the points of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Pilots per user, `J`.
    Pilots,
    SnrUplinkDb,
    SnrDownlinkDb,
    /// SH truncation `K`.
    K,
    /// Square array side, `M_y = M_z`.
    ArraySide,
    /// Clusters per user.
    Paths,
    RaysPerCluster,
    /// Time symbols `T`.
    TimeSymbols,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Pilots => "pilots",
            Self::SnrUplinkDb => "snr_uplink_db",
            Self::SnrDownlinkDb => "snr_downlink_db",
            Self::K => "k",
            Self::ArraySide => "array_side",
            Self::Paths => "paths",
            Self::RaysPerCluster => "rays_per_cluster",
            Self::TimeSymbols => "time_symbols",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Problem size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// `G = 128`, 50 trials.
    Desk,
    /// `G = 512`, 100 trials.
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!("unknown scale '{other}' (desk or paper)"))),
        }
    }
}

/// How many paths the estimators assume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOrderMode {
    Estimated,
    True,
}

/// Everything a sweep needs; all fields have desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub experiment: Experiment,
    pub m_y: usize,
    pub m_z: usize,
    /// Element spacing over wavelength.
    pub spacing_wavelengths: f64,
    pub carrier_frequency: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub max_delay: f64,
    pub paths: usize,
    pub rays_per_cluster: usize,
    pub azimuth_spread_deg: f64,
    pub zenith_spread_deg: f64,
    pub rician_k_db: Option<f64>,
    pub users: usize,
    pub k: usize,
    pub pilots: usize,
    pub time_symbols: usize,
    pub snr_uplink_db: f64,
    pub snr_downlink_db: f64,
    pub power: f64,
    pub model_order: ModelOrderMode,
    pub eta_th: f64,
    pub iota_max: usize,
    /// Also run the precoding schemes on estimated eCSI.
    pub estimated_ecsi: bool,
    /// Restrict to these scheme names; empty means all.
    pub schemes: Vec<String>,
    pub sweep: Option<Sweep>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            scenario: "default".into(),
            experiment: Experiment::Estimation,
            m_y: 6,
            m_z: 6,
            spacing_wavelengths: 0.5,
            carrier_frequency: 3.5e9,
            subcarriers: 256,
            subcarrier_spacing: 30e3,
            max_delay: 100e-9,
            paths: 6,
            rays_per_cluster: 1,
            azimuth_spread_deg: 0.0,
            zenith_spread_deg: 0.0,
            rician_k_db: None,
            users: 6,
            k: 100,
            pilots: 24,
            time_symbols: 3,
            snr_uplink_db: 15.0,
            snr_downlink_db: 15.0,
            power: 1.0,
            model_order: ModelOrderMode::Estimated,
            eta_th: 1e-4,
            iota_max: 200,
            estimated_ecsi: true,
            schemes: Vec::new(),
            sweep: None,
            trials: 50,
            seed: 1,
        }
    }

    pub fn paper() -> Self {
        Self { subcarriers: 512, trials: 100, ..Self::desk() }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    /// Parses TOML on top of the defaults of `scale`; missing keys keep the preset.
    pub fn from_toml_str(text: &str, scale: Scale) -> Result<Self> {
        let preset = toml::Value::try_from(Self::for_scale(scale)).map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = preset;
        if let (toml::Value::Table(base), toml::Value::Table(over)) = (&mut merged, user) {
            for (k, v) in over {
                base.insert(k, v);
            }
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, scale: Scale) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text, scale).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let wavelength = 299_792_458.0 / self.carrier_frequency;
        ArrayGeometry::new(self.m_y, self.m_z, self.spacing_wavelengths * wavelength, wavelength)
    }

    pub fn system(&self) -> Result<SystemConfig> {
        SystemConfig::new(self.subcarriers, self.subcarrier_spacing, self.users, 1.0)
    }

    pub fn path_statistics(&self) -> PathStatistics {
        PathStatistics {
            paths: self.paths,
            rays_per_cluster: self.rays_per_cluster,
            max_delay: self.max_delay,
            rician_k_db: self.rician_k_db,
            azimuth_spread_deg: self.azimuth_spread_deg,
            zenith_spread_deg: self.zenith_spread_deg,
            ..PathStatistics::default()
        }
    }

    pub fn order_selection(&self) -> OrderSelection {
        match self.model_order {
            ModelOrderMode::Estimated => OrderSelection::Estimated(ModelOrderRule::default()),
            ModelOrderMode::True => OrderSelection::True,
        }
    }

    /// Sweep points; a configuration without a sweep has a single point.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().map(|v| Some(*v)).collect(),
            None => vec![None],
        }
    }

    /// This configuration with the sweep variable set to `value`.
    pub fn at(&self, value: Option<f64>) -> Result<Self> {
        let (Some(sweep), Some(v)) = (&self.sweep, value) else {
            return Ok(self.clone());
        };
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} of '{}' must be a non-negative integer", sweep.variable)))
            }
        };
        let mut c = self.clone();
        match sweep.variable {
            SweepVariable::Pilots => c.pilots = as_count(v)?,
            SweepVariable::SnrUplinkDb => c.snr_uplink_db = v,
            SweepVariable::SnrDownlinkDb => c.snr_downlink_db = v,
            SweepVariable::K => c.k = as_count(v)?,
            SweepVariable::ArraySide => {
                c.m_y = as_count(v)?;
                c.m_z = c.m_y;
            }
            SweepVariable::Paths => c.paths = as_count(v)?,
            SweepVariable::RaysPerCluster => c.rays_per_cluster = as_count(v)?,
            SweepVariable::TimeSymbols => c.time_symbols = as_count(v)?,
        }
        Ok(c)
    }

    /// Checks every sweep point against the preconditions of the modules it drives.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep has no values".into());
            }
        }
        for point in self.points() {
            let c = self.at(point)?;
            let at = match point {
                Some(v) => format!(" (at {} = {v})", self.sweep.as_ref().map(|s| s.variable.to_string()).unwrap_or_default()),
                None => String::new(),
            };
            c.validate_point().map_err(|e| Error::Config(format!("{e}{at}")))?;
        }
        Ok(())
    }

    fn validate_point(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.geometry()?;
        self.system()?;
        self.path_statistics().validate()?;
        if !(self.carrier_frequency > 0.0) {
            return bad("carrier frequency must be positive".into());
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        let m = self.m_y * self.m_z;
        if self.users > m {
            return bad(format!("{} users exceed M = {m} antennas", self.users));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return bad("power must be finite and non-negative".into());
        }
        if self.snr_downlink_db.is_nan() || !self.snr_downlink_db.is_finite() {
            return bad("downlink SNR must be finite".into());
        }
        if self.snr_uplink_db.is_nan() {
            return bad("uplink SNR must not be NaN".into());
        }
        if !(self.eta_th > 0.0) || self.iota_max == 0 {
            return bad("eta_th must be positive and iota_max at least 1".into());
        }
        let estimating = self.experiment == Experiment::Estimation || self.estimated_ecsi;
        if estimating {
            allocate_pilots(self.subcarriers, self.users, self.pilots)?;
            let clusters = self.paths;
            let rays = clusters * self.rays_per_cluster;
            if self.m_y < 2 || self.m_z < 2 {
                return bad("angle estimation needs at least 2 elements along y and z".into());
            }
            if self.pilots < clusters + 1 {
                return bad(format!("J = {} pilots cannot resolve {clusters} delays (need J ≥ L + 1)", self.pilots));
            }
            let cap = ((self.m_y - 1) * self.m_z).min(self.m_y * (self.m_z - 1));
            if rays > cap {
                return bad(format!("{rays} paths exceed the 2D-ESPRIT limit {cap} for this array"));
            }
            if self.time_symbols == 0 || self.time_symbols > self.k {
                return bad(format!("T = {} must lie in [1, K = {}]", self.time_symbols, self.k));
            }
            if m * self.time_symbols <= rays {
                return bad(format!("M·T = {} must exceed the {rays} paths", m * self.time_symbols));
            }
        }
        Ok(())
    }
}
