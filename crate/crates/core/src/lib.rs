//! Collective-decay dynamics of coherently driven two-level atoms.
//!
//! The crate builds Lindblad generators for three models (two atoms coupled
//! to a leaky cavity mode, the reduced collective-decay model obtained after
//! eliminating the cavity, and an ensemble of atoms under a resonant drive
//! with collective decay), integrates them, extracts steady states, and
//! compares the results against closed-form Werner-state predictions.
//!
//! Module map:
//!
//! - [`state`]: density matrices, kets, operators and quantum-information
//!   functionals (partial trace, fidelity, entropy, trace distance).
//! - [`spin`]: collective-spin algebra, Bell states and the pairwise
//!   Clebsch–Gordan coupled basis.
//! - [`lindblad`]: Liouvillian builders, time evolution and steady states.
//! - [`werner`]: closed-form Werner-state predictions.
//! - [`scenario`]: configuration parsing, named experiments and result tables.
//!
//! Conventions: single-atom basis is `{e, g}` (index 0 is excited), product
//! bases put atom 1 in the most significant position, superoperators act on
//! column-stacked density matrices, and times are measured in units of 1/Γ.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lindblad;
pub mod scenario;
pub mod spin;
pub mod state;
pub mod werner;

pub use error::{Error, Result};

/// Dense complex matrix used for every operator and state.
pub type CMatrix = nalgebra::DMatrix<num_complex::Complex64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<num_complex::Complex64>;
pub use num_complex::Complex64;
