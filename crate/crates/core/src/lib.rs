//! Simulation, estimation and testing for diffusion processes observed
//! through a per-axis moving-average (convolution) kernel.
//!
//! The observed series is a windowed average of a latent diffusion; the
//! window length per axis is `rho * h` in units of the sampling step `h`.
//! The crate provides the closed-form kernel functions, an Euler-Maruyama
//! simulator, the convolution observer, quadratic-variation statistics, an
//! estimator and hypothesis test for `rho`, least-square quasi-likelihood
//! estimators for the drift and diffusion parameters, and a config-driven
//! Monte Carlo harness behind the `convdiff` CLI.

pub mod conv;
pub mod error;
pub mod harness;
pub mod inference;
pub mod kernel;
pub mod optim;
pub mod parallel;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use kernel::{PiecewiseValue, SmoothingBound};
