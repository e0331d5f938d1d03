//! Wavelet-parameterized MAP estimation for an elliptic inverse problem.
//!
//! The unknown is a log-permeability field `u` on the unit square, observed
//! through point values of the pressure solving `-div(e^u grad p) = f`.
//! Haar wavelet and trigonometric parameterizations, Besov-type priors,
//! adjoint gradients and the optimizers that drive them live in the
//! submodules below.

pub mod besov;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod grid;
pub mod optimize;
pub mod pde;
pub mod prior;
pub mod wavelet;

pub use error::{Error, ErrorCategory, Result};
pub use grid::GridField;
