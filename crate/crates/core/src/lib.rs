//! Spectral laboratory for a slow-fast stochastic fluid system on the 2D
//! torus: Galerkin dynamics, Ornstein-Uhlenbeck correctors, the
//! transport-noise limit and the eddy-viscosity limit.

pub mod cli;
pub mod corrector;
pub mod error;
pub mod integrators;
pub mod limit;
pub mod operators;
pub mod ou;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
