//! Cahn-Hilliard flow with a dynamic boundary condition and a weighted mass
//! constraint on the boundary.
//!
//! The crate simulates the conserved order-parameter evolution on a periodic
//! strip, with the boundary carrying its own parabolic equation coupled
//! through the trace and the normal derivative. The boundary mass
//! `h(t) = integral of w_Gamma v_Gamma` is confined to `[h_lo, h_hi]` by a
//! scalar Lagrange multiplier `lambda`; a second multiplier `omega` (the mean
//! of the chemical potential) balances bulk mass conservation. Nonsmooth
//! potentials enter through maximal monotone graphs regularized in the
//! Moreau-Yosida sense at a parameter `eps`, with drivers for the `eps -> 0`
//! and viscosity `tau -> 0` continuation studies.

pub mod config;
pub mod constraint;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod monotone;
pub mod operators;
pub mod output;
pub mod stepper;

pub use error::{Error, Result};
