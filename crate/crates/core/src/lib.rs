//! Numerical laboratory for l^2 decoupling of the paraboloid.

pub mod decoupling;
pub mod engine;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod multilinear;
pub mod parallel;
pub mod report;
pub mod weights;

pub use error::{LabError, Result};
