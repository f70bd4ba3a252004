//! Null controls for the two-dimensional Stokes system built by control
//! transmutation.
//!
//! The crate drives a hyperbolic Stokes system (a vector wave equation with a
//! pressure constraint) to rest with a filtered Hilbert Uniqueness Method,
//! builds a controlled fundamental solution of the 1D heat equation, and
//! composes the two into a null control for the parabolic Stokes system.
//! Everything runs on a MAC grid over the centered unit square, with the
//! Stokes operator diagonalized once per grid.
//!
//! Module map:
//!
//! * [`domain`] geometry, control collar, discrete norms
//! * [`stokesop`] discrete Stokes operator, Leray projector, modal engine
//! * [`evolve`] exact modal propagators and a finite-difference reference stepper
//! * [`hum`] observability Gramians, conjugate gradients, null controls
//! * [`kernel`] the controlled fundamental solution `k(t, s)`
//! * [`transmute`] parabolic controls assembled from hyperbolic ones
//! * [`observability`] multiplier identities and observability constants
//! * [`expcli`] configuration, persistence, sweeps and cost-model fits

pub mod domain;
pub mod error;
pub mod evolve;
pub mod expcli;
pub mod fit;
pub mod hum;
pub mod kernel;
pub mod linalg;
pub mod observability;
pub mod quadrature;
pub mod sampling;
pub mod stokesop;
pub mod transmute;

pub use error::{Error, Result};
