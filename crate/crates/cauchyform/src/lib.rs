//! Discrete exterior calculus for wave and Maxwell dynamics on ultrastatic
//! spacetimes `ℝ × Σ` whose Cauchy slice Σ has a boundary.

pub mod algebra;
pub mod boundary;
pub mod cli;
pub mod cohomology;
pub mod dec;
pub mod error;
pub mod linalg;
pub mod maxwell;
pub mod mesh;
pub mod propagator;

pub use error::{Error, Result};
