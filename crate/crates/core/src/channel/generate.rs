use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Path, UeChannelSpec};
use crate::error::{domain, Result};
use crate::linalg::{cis, C64};
use crate::sphharm::SphericalDirection;

/// Statistics of the random multipath draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    /// Clusters per user (`L_u` when each cluster is a single ray).
    pub paths: usize,
    pub rays_per_cluster: usize,
    /// Departure azimuth sector in degrees.
    pub azimuth_range_deg: (f64, f64),
    /// Departure zenith sector in degrees.
    pub zenith_range_deg: (f64, f64),
    /// Maximum delay in seconds.
    pub max_delay: f64,
    /// Rician factor of the first cluster in dB; `None` for pure NLoS.
    pub rician_k_db: Option<f64>,
    /// Standard deviations of intra-cluster ray offsets, degrees.
    pub azimuth_spread_deg: f64,
    pub zenith_spread_deg: f64,
}

impl Default for PathStatistics {
    fn default() -> Self {
        Self {
            paths: 6,
            rays_per_cluster: 1,
            azimuth_range_deg: (-60.0, 60.0),
            zenith_range_deg: (60.0, 150.0),
            max_delay: 100e-9,
            rician_k_db: None,
            azimuth_spread_deg: 0.0,
            zenith_spread_deg: 0.0,
        }
    }
}

impl PathStatistics {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.rays_per_cluster == 0 {
            return domain("need at least one cluster and one ray per cluster");
        }
        let (a0, a1) = self.azimuth_range_deg;
        let (z0, z1) = self.zenith_range_deg;
        if !(a0 <= a1) || !(z0 <= z1) {
            return domain("empty angular sector");
        }
        if z0 < 0.0 || z1 > 180.0 || a0 < -180.0 || a1 > 180.0 {
            return domain("angular sector outside the sphere");
        }
        if !(self.max_delay >= 0.0) {
            return domain("maximum delay must be non-negative");
        }
        if self.azimuth_spread_deg < 0.0 || self.zenith_spread_deg < 0.0 {
            return domain("angle spreads must be non-negative");
        }
        Ok(())
    }

    /// Total number of rays per user.
    pub fn total_paths(&self) -> usize {
        self.paths * self.rays_per_cluster
    }
}

fn complex_normal(rng: &mut impl Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws one channel per user. Deterministic in `seed`.
///
/// Cluster powers average `1/L` (or follow the Rician split when configured, the
/// first cluster then being a fixed-amplitude line-of-sight component with random
/// phase). Rays of a cluster share its delay and scatter around its angles.
pub fn generate_paths(seed: u64, stats: &PathStatistics, users: usize) -> Result<Vec<UeChannelSpec>> {
    stats.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = stats.paths;
    let rays = stats.rays_per_cluster;
    let powers: Vec<f64> = match stats.rician_k_db {
        Some(k_db) if clusters > 1 => {
            let k = 10f64.powf(k_db / 10.0);
            (0..clusters)
                .map(|c| if c == 0 { k / (k + 1.0) } else { 1.0 / ((k + 1.0) * (clusters - 1) as f64) })
                .collect()
        }
        _ => vec![1.0 / clusters as f64; clusters],
    };
    let az_spread = Normal::new(0.0, stats.azimuth_spread_deg.max(0.0)).expect("finite spread");
    let ze_spread = Normal::new(0.0, stats.zenith_spread_deg.max(0.0)).expect("finite spread");

    let mut out = Vec::with_capacity(users);
    for _ in 0..users {
        let mut paths = Vec::with_capacity(clusters * rays);
        for (c, power) in powers.iter().enumerate() {
            let delay = uniform(&mut rng, 0.0, stats.max_delay);
            let az = uniform(&mut rng, stats.azimuth_range_deg.0, stats.azimuth_range_deg.1);
            let ze = uniform(&mut rng, stats.zenith_range_deg.0, stats.zenith_range_deg.1);
            let aoa_theta = uniform(&mut rng, -1.0, 1.0).acos();
            let aoa_phi = uniform(&mut rng, -PI, PI);
            let los = c == 0 && stats.rician_k_db.is_some();
            for r in 0..rays {
                let (ray_az, ray_ze) = if rays > 1 && r > 0 {
                    (az + az_spread.sample(&mut rng), (ze + ze_spread.sample(&mut rng)).clamp(0.0, 180.0))
                } else {
                    (az, ze)
                };
                let amplitude = (power / rays as f64).sqrt();
                let gain = if los && r == 0 {
                    cis(uniform(&mut rng, -PI, PI)) * amplitude
                } else {
                    complex_normal(&mut rng) * amplitude
                };
                paths.push(Path {
                    gain,
                    delay,
                    aod: SphericalDirection::from_degrees(ray_ze, ray_az)?,
                    aoa: SphericalDirection::new(aoa_theta, aoa_phi)?,
                });
            }
        }
        out.push(UeChannelSpec::new(paths)?);
    }
    Ok(out)
}
