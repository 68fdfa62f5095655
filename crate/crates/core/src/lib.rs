//! Coordinate and variance-reduced methods for sparse bilinear saddle-point problems.

pub mod applications;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod exp_maintainer;
pub mod geometry;
pub mod iterate_maintainers;
pub mod solvers;
pub mod sparse_matrix;

pub use error::{Error, Result};
