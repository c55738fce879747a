//! Balanced truncation for Bayesian inference of the initial condition of a
//! stable LTI system from noisy output measurements.
//!
//! The crate provides:
//! - dense linear-algebra kernels (matrix exponential, Lyapunov solvers,
//!   semidefinite factorizations, generalized eigensolvers) in [`linalg`];
//! - the system model and its Gramians in [`lti`];
//! - dynamics-compatible prior construction in [`prior`];
//! - observation schedules, measurement simulation, Fisher information, and
//!   the exact posterior in [`inference`];
//! - square-root balanced truncation and its inference variants in
//!   [`reduction`];
//! - the optimal low-rank posterior baselines and the Förstner metric in
//!   [`optimal`];
//! - benchmark system generation and Matrix Market I/O in [`mod@bench`]
//!   and [`mm`].

pub mod bench;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod lti;
pub mod mm;
pub mod optimal;
pub mod prior;
pub mod reduction;
pub mod testing;

pub use error::{Error, Result};
