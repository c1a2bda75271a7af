//! Radiation-pattern-reconfigurable massive MIMO.
//!
//! * [`sphharm`]: real spherical-harmonic bases and pattern decomposition.
//! * [`channel`]: geometric multipath OFDM channels and their spatial/EM-domain forms.
//! * [`manifold`]: Riemannian conjugate gradient on the sphere and oblique manifolds.
//! * [`precoder`]: spectral efficiency, zero forcing and the alternating EM/digital design.
//! * [`estimator`]: delay/angle subspace estimation of spatial and EM-domain CSI.
//! * [`harness`]: seeded Monte-Carlo sweeps, metrics and result files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod harness;
pub mod estimator;
pub mod linalg;
pub mod manifold;
pub mod precoder;
pub mod sphharm;

pub use error::{Error, Result};
