//! Linear theory of single-tone and balanced two-tone driven cavity
//! optomechanics.
//!
//! The crate is organised around the 4×4 dynamical matrix of the linearised
//! Langevin equations for the quadrature vector `[Xa, Ya, Xb, Yb]`:
//!
//! * [`model`]: physical parameters, drive configuration, self-energy and the
//!   dynamical matrix.
//! * [`stability`]: eigenvalue classification, the closed-form two-tone
//!   threshold, analytic and marching-squares contours, stability maps.
//! * [`spectra`]: symmetrized output spectra, sideband power, backaction
//!   evasion diagnostics, Lorentzian feature extraction.
//! * [`dynamics`]: seeded stochastic integration, growth-rate estimation and a
//!   non-RWA brute-force oracle.
//! * [`cli`]: configuration, sweeps, figure recipes and plotting used by the
//!   `twotone` binary.
//!
//! All rates and frequencies are angular (rad/s, or any consistent angular
//! unit) inside the library.

// range checks are written as `!(x > 0.0)` so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dynamics;
mod error;
pub mod linalg;
pub mod model;
pub mod spectra;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    build_dynamical_matrix, effective_eigenvalues, self_energy, Coupling, DriveConfig, DriveMode, DynamicalMatrix,
    EffectiveEigenvalues, SystemParams,
};
pub use stability::{classify, FixedPointClass, StabilityReport};

/// Format-version tag embedded in every serialized artifact.
pub const FORMAT_VERSION: &str = "twotone/1";
