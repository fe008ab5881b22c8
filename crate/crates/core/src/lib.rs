//! Curved high-order mesh r-adaption to discrete metric fields and implicit
//! CAD boundaries.
//!
//! The library optimizes node coordinates of simplicial high-order meshes by
//! Newton minimization of a regularized metric-aware distortion functional
//! plus a boundary-deviation penalty built on an implicit representation of
//! the target geometry.

pub mod basis;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod metric;
pub mod distortion;
pub mod quadrature;
pub mod sparse;

pub use error::{Error, Result};
