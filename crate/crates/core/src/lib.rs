//! Numerical laboratory for waves crossing a coefficient jump.
//!
//! The crate is organised bottom-up:
//!
//! * [`medium`]: domain, interface, piecewise coefficient and the travel-time
//!   distance `dist` with the largest distance `L(M, E)`;
//! * [`elliptic`]: the flux-conservative operator `A = -div(c grad)` with
//!   Dirichlet boundary, its spectrum and the Sobolev-scale norms;
//! * [`wavesolver`]: leapfrog time stepping, energies, traces, observations;
//! * [`spectral`]: time-frequency multipliers (Gaussian regularisation, band
//!   cutoffs, the weight action `Q^φ`);
//! * [`carleman`]: weights, phase-space region classification, factor symbols
//!   and the quadrature form of the Carleman inequality;
//! * [`control`]: observability, stability, penalised HUM control cost and the
//!   total internal reflection experiment.

pub mod carleman;
pub mod control;
pub mod elliptic;
pub mod error;
pub mod medium;
pub mod spectral;
pub mod wavesolver;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
