//! Geometric multipath OFDM channels for a uniform planar array, in both the
//! spatial domain (sCSI `h_{u,m,g}`) and the EM domain (eCSI `q_{u,m,g}`).
//!
//! Antenna `m = m_y·M_z + m_z` with zero-based `m_y ∈ [0, M_y)`, `m_z ∈ [0, M_z)`
//! sits at `[0, (2m_y + 1 − M_y)/2·d, (M_z − 2m_z − 1)/2·d]`. Subcarrier `g` is
//! zero-based with frequency `f_g = (g + 1)·Δf`.

mod ecsi;
mod generate;
mod io;

pub use ecsi::{build_ecsi, scsi_direct, scsi_from_ecsi, EcsiTensor, ScsiTensor, UeEcsi};
pub use generate::{generate_paths, PathStatistics};
pub use io::{read_channel_csv, write_channel_csv};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{cis, C64};
use crate::sphharm::SphericalDirection;

/// Amplitude of the UE's omnidirectional, unit-energy receive pattern.
pub const RX_ISOTROPIC_GAIN: f64 = 0.282_094_791_773_878_14;

/// Uniform planar array in the y–z plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub m_y: usize,
    pub m_z: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(m_y: usize, m_z: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if m_y == 0 || m_z == 0 {
            return domain("array needs at least one element per axis");
        }
        if !(spacing > 0.0) || !(wavelength > 0.0) {
            return domain("spacing and wavelength must be positive");
        }
        Ok(Self { m_y, m_z, spacing, wavelength })
    }

    /// Half-wavelength array at a 3.5 GHz carrier.
    pub fn half_wavelength(m_y: usize, m_z: usize) -> Result<Self> {
        let wavelength = 299_792_458.0 / 3.5e9;
        Self::new(m_y, m_z, wavelength / 2.0, wavelength)
    }

    pub fn antennas(&self) -> usize {
        self.m_y * self.m_z
    }

    pub fn index(&self, m_y: usize, m_z: usize) -> usize {
        m_y * self.m_z + m_z
    }

    /// `(m_y, m_z)` of antenna `m`.
    pub fn coords(&self, m: usize) -> (usize, usize) {
        (m / self.m_z, m % self.m_z)
    }

    pub fn position(&self, m: usize) -> [f64; 3] {
        let (my, mz) = self.coords(m);
        let d = self.spacing;
        [
            0.0,
            (2.0 * my as f64 + 1.0 - self.m_y as f64) / 2.0 * d,
            (self.m_z as f64 - 2.0 * mz as f64 - 1.0) / 2.0 * d,
        ]
    }

    /// `2π·d/λ`, the phase scale of the spatial frequencies.
    pub fn phase_scale(&self) -> f64 {
        2.0 * PI * self.spacing / self.wavelength
    }

    /// Spatial frequencies `(μ, ν) = (2πd/λ·sinθ sinφ, −2πd/λ·cosθ)` of a departure direction.
    pub fn spatial_frequencies(&self, dir: SphericalDirection) -> (f64, f64) {
        let s = self.phase_scale();
        (s * dir.theta.sin() * dir.phi.sin(), -s * dir.theta.cos())
    }
}

/// `e^{−j(2π/λ)·k_txᵀ p_m}` for antenna `m` (zero-based).
pub fn steering_phasor(geom: &ArrayGeometry, dir: SphericalDirection, m: usize) -> C64 {
    let k = dir.unit_vector();
    let p = geom.position(m);
    let dot = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
    cis(-2.0 * PI / geom.wavelength * dot)
}

/// `x̃·e^{−j2πτf}`.
pub fn delay_gain(gain: C64, delay: f64, freq: f64) -> C64 {
    gain * cis(-2.0 * PI * delay * freq)
}

/// OFDM numerology and link parameters shared by all users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub subcarriers: usize,
    /// Subcarrier spacing Δf in Hz.
    pub subcarrier_spacing: f64,
    pub users: usize,
    pub noise_variance: f64,
}

impl SystemConfig {
    pub fn new(subcarriers: usize, subcarrier_spacing: f64, users: usize, noise_variance: f64) -> Result<Self> {
        if subcarriers == 0 || users == 0 {
            return domain("need at least one subcarrier and one user");
        }
        if subcarriers < users {
            return domain(format!("G = {subcarriers} < U = {users}"));
        }
        if !(subcarrier_spacing > 0.0) || !(noise_variance >= 0.0) {
            return domain("subcarrier spacing must be positive and noise variance non-negative");
        }
        Ok(Self { subcarriers, subcarrier_spacing, users, noise_variance })
    }

    pub fn bandwidth(&self) -> f64 {
        self.subcarriers as f64 * self.subcarrier_spacing
    }

    /// `f_g = (g + 1)/G · B_w` for zero-based `g`.
    pub fn frequency(&self, g: usize) -> f64 {
        (g + 1) as f64 * self.subcarrier_spacing
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.subcarriers).map(|g| self.frequency(g)).collect()
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: C64,
    /// Seconds.
    pub delay: f64,
    pub aod: SphericalDirection,
    pub aoa: SphericalDirection,
}

/// Multipath description of one user's channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeChannelSpec {
    pub paths: Vec<Path>,
    /// UE antenna position in meters.
    pub position: [f64; 3],
}

impl UeChannelSpec {
    pub fn new(paths: Vec<Path>) -> Result<Self> {
        if paths.is_empty() {
            return domain("a channel needs at least one path");
        }
        Ok(Self { paths, position: [0.0; 3] })
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn aods(&self) -> Vec<SphericalDirection> {
        self.paths.iter().map(|p| p.aod).collect()
    }

    /// Receive-side phase `e^{−j(2π/λ)k_rxᵀ q_u}` of each path.
    pub fn arrival_phasors(&self, wavelength: f64) -> Vec<C64> {
        self.paths
            .iter()
            .map(|p| {
                let k = p.aoa.unit_vector();
                let q = self.position;
                cis(-2.0 * PI / wavelength * (k[0] * q[0] + k[1] * q[1] + k[2] * q[2]))
            })
            .collect()
    }
}
