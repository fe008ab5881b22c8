//! Implicitization of rational Bézier patches and CAD boundary models with
//! first and second derivatives.
//!
//! Pipeline per patch: moving-hyperplane matrix representation, Gram
//! determinant, normalization, convex-hull trimming; patches fold into
//! entities and entities into the model function by r-conjunction. All
//! derivative carriers are value-scaled where the raw tensors would be
//! singular at the zero set.

pub mod bezier;
pub mod hull;
pub mod model;
pub mod mrep;
pub mod stack;

pub use bezier::BezierPatch;
pub use hull::ConvexHullRep;
pub use model::{load_model, model_from_file, save_model, EntityFile, ImplicitEntity, ImplicitModel, ModelFile, PatchFile, TrimmedPatch};
pub use mrep::{implicitize_patch, split_autointersections, MRepMatrix};
pub use stack::{Bundle3, Det4, HullBundle, Raw4};

#[cfg(test)]
mod tests;
