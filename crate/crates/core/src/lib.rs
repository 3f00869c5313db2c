//! Correlation-filter visual tracking with jointly learned feature codes.
//!
//! The input features of a dual correlation filter are re-expressed as codes
//! over a fixed dictionary, regularized by a neighbourhood-graph Laplacian,
//! and optimized together with the filter by ADMM. The crate provides the
//! solver, the baseline filter, a complete tracker, and benchmark tooling.

pub mod coding;
pub mod dcf;
pub mod error;
pub mod eval;
pub mod features;
pub mod signal;
pub mod solver;
pub mod synthetic;
pub mod tracker;

pub use error::{Error, Result};
