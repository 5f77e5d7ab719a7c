//! Sharpness-reduction dynamics of gradient descent with weight decay on
//! scale-invariant losses.
//!
//! The crate is organised bottom-up:
//!
//! - [`silo`]: scale-invariant loss oracles (linear regression with BN, matrix
//!   completion with BN, a 3D toy loss) and finite-difference cross-checks.
//! - [`sched`]: RMSprop, GWSI and the quasi-RMSprop residual contract.
//! - [`dynamics`]: GD+WD, projected GD on the sphere, scalar RMSprop and the
//!   trace-recording run loop.
//! - [`spectra`]: Lanczos, spherical sharpness, eigen-gaps, PAC-Bayes bound.
//! - [`manifold`]: the projection onto the minimizer manifold, tangent
//!   projections, the sharpness-reduction flow and oscillation observables.
//! - [`driftsim`]: the RMS-drift process and its Hamiltonian limit.
//! - [`harness`]: data generation, traces, detectors, experiments, checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driftsim;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod manifold;
pub mod sched;
pub mod silo;
pub mod spectra;

pub use error::{Error, Result};
pub use exec::Exec;
pub use linalg::{Matrix, Vector};
pub use silo::LossOracle;
