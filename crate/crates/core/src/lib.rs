//! Nash equilibria of deterministic portfolio-liquidation games in which
//! players may not reverse their trading direction.
//!
//! The solver reduces the game to entry/exit timing plus a parameterized
//! backward integral equation for the aggregate trading rate, then pins the
//! two free parameters (terminal rate and exit mass) by root finding.
//!
//! Module map:
//! - [`model`]: cost coefficients, time grid, variant modes.
//! - [`dist`]: initial-position law and its tail functionals.
//! - [`riccati`]: the singular Riccati solution and derived weight tables.
//! - [`kernels`]: entry and exit kernels, entry/exit time maps.
//! - [`equilibrium`]: backward march, Picard cross-check, root map, solver.
//! - [`paths`]: individual best responses, costs, population aggregation.
//! - [`oracle`]: independent QP best responses, deviation and sensitivity tests.
//! - [`cli`]: scenario configs and the command-line runner.

pub mod cli;
pub mod dist;
pub mod equilibrium;
pub mod error;
pub mod kernels;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod paths;
pub mod riccati;

pub use error::{Error, Result};
