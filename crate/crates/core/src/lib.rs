//! Numerical laboratory for reflected stochastic differential equations in
//! domains that are neither smooth nor convex.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: analytic domains (interval, disk, box, crescent, L-shape)
//!   with closest-point projection, normal cones, and a numerical verifier for
//!   the exterior-sphere, uniform interior-cone, and boundary-gradient
//!   conditions the theory relies on.
//! * [`penalty`]: the penalty potential `phi = rho(d(x, D)^2)` and its gradient.
//! * [`paths`]: time grids and counter-based Brownian increments with a
//!   Brownian-bridge refinement rule, so that every scheme can be driven by the
//!   same noise.
//! * [`penalized`] and [`reflected`]: the penalized SDE and the projected
//!   reference solver (including the deterministic Skorokhod problem).
//! * [`control`]: dynamic programming for the controlled value function, Monte
//!   Carlo policy evaluation and the dynamic programming principle.
//! * [`hjb`]: the Hamiltonian, the `N^-`/`N^+` boundary operators and
//!   grid-level viscosity certificates with a comparison check.
//! * [`maxprinciple`]: support sampling via the Skorokhod problem,
//!   submartingale tests and constancy on the reachable set.

pub mod coefficients;
pub mod control;
pub mod geometry;
pub mod hjb;
pub mod maxprinciple;
pub mod paths;
pub mod penalized;
pub mod penalty;
pub mod reflected;
pub mod stats;

/// A point (or vector) in `R^D`.
pub type Point<const D: usize> = nalgebra::SVector<f64, D>;

/// A `D x D` matrix; diffusion matrices are square (one Brownian component per
/// state coordinate).
pub type Matrix<const D: usize> = nalgebra::SMatrix<f64, D, D>;

pub use coefficients::Coefficients;
pub use geometry::{DomainBuilder, DomainKind, DomainModel, VerifiedDomain};
pub use paths::{BrownianPath, StreamId, TimeGrid};
pub use penalty::PenaltyField;
