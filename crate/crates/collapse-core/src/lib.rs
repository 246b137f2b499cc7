//! Asymptotic test-error theory for ridge regression trained on mixtures of
//! real and synthetic data, with a finite-size Monte Carlo lab that verifies
//! every formula.
//!
//! The crate is organized around the objects of the theory:
//!
//! - [`spectra`]: diagonal spectra (Σ, Γ, Δ), mixture models, scaling ratios;
//! - [`fixed_point`]: the self-consistency equations (κ; e, τ, u, ω; the
//!   two-covariance systems; ridgeless limits);
//! - [`risk`]: bias/variance/collapse decompositions of the test error and
//!   their closed-form corollaries;
//! - [`detequiv`]: deterministic equivalents r⁽¹⁾–r⁽⁵⁾ of the resolvent trace
//!   functionals for general diagonal covariances;
//! - [`simulate`]: Gaussian data generation, ridge / random-projection /
//!   weighted fits, exact conditional test error, Monte Carlo estimators;
//! - [`scenario`]: declarative experiment configs, parallel sweeps, CSV/JSON
//!   emission;
//! - [`acceptance`]: the verification suite the CLI exposes as
//!   `collapse-lab verify`.

pub mod acceptance;
pub mod detequiv;
pub mod error;
pub mod fixed_point;
pub mod risk;
pub mod scenario;
pub mod simulate;
pub mod spectra;

pub use error::{Error, Result};
