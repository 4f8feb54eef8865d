//! Continuous-time two-timescale stochastic gradient descent.
//!
//! The crate is organised bottom-up:
//!
//! - [`noise`] and [`sde`]: counter-based Wiener increments and Euler–Maruyama
//!   integration of Itô systems.
//! - [`linear`]: Kalman–Bucy filter, tangent filters and a Riccati oracle.
//! - [`benes`]: the exact Beneš filter with tangents and posterior readouts.
//! - [`advdiff`]: spectral Galerkin model of a stochastic advection-diffusion
//!   equation on the unit torus, packaged as a linear-Gaussian model.
//! - [`bundle`]: signal generators paired with filters, the interface the
//!   online algorithms and the diagnostics consume.
//! - [`twotimescale`]: learning rates, projection, the generic, Markovian and
//!   surrogate-gradient algorithms, and joint online parameter estimation with
//!   sensor placement.
//! - [`diagnostics`]: ergodic estimators, finite differences, L1 error curves.

pub mod advdiff;
pub mod benes;
pub mod bundle;
pub mod diagnostics;
pub mod error;
pub mod linear;
pub mod noise;
pub mod record;
pub mod sde;
pub mod twotimescale;

pub use error::{Error, Result};
pub use noise::{NoiseCursor, NoiseStream};
pub use record::TrajectoryRecord;
pub use sde::{SdeSystem, TimeGrid};
