//! Semidefinite relaxations of sequential quantum correlations.
//!
//! The crate builds moment-matrix relaxations for Bell scenarios in which
//! each party measures a time-ordered sequence, solves them with an embedded
//! primal-dual interior-point method, and cross-checks them against a
//! finite-dimensional strategy simulator and deterministic-strategy
//! enumeration.

pub mod error;
pub mod moment;
pub mod ncalg;
pub mod par;
pub mod qsim;
pub mod scenario;
pub mod solver;
pub mod tasks;

pub use error::{Error, Result};
