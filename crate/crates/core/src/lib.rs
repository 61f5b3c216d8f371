//! Simulation of an N-atom cavity-QED Ramsey interferometer built on atomic
//! Schrödinger-cat states.
//!
//! The crate is organised bottom-up:
//!
//! - [`spin`]: collective angular momentum on the symmetric (Dicke) subspace,
//!   atomic coherent states and rotations.
//! - [`dispersive`]: the ideal pulse sequence in the dispersive limit, both as
//!   exact unitaries and as closed-form final states and signals.
//! - [`exact`]: the joint atom-cavity density matrix propagated through the
//!   full time-dependent Tavis-Cummings dynamics with cavity damping.
//! - [`stats`]: Poisson-averaged and detection-conditioned signals and phase
//!   uncertainties.
//! - [`weights`]: the weighted estimator over detected-atom-number classes and
//!   its optimal weights.

pub mod dispersive;
pub mod error;
pub mod exact;
pub mod spin;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
