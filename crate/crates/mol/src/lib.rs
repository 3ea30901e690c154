//! Meshfree elliptic PDE solvers, operator-learning surrogates, and Bayesian
//! coefficient inversion on point-cloud manifolds.

// Force the BLAS backend to link.
extern crate openblas_src;

pub mod dataset;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod inversion;
pub mod network;
pub mod operators;
pub mod solver;
pub mod sparse;

pub use error::{MolError, Result};
