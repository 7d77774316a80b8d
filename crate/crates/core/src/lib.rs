//! Probabilistic correspondence-based statistical shape modelling learned directly from
//! surface meshes.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! bottom of this file pin the common `f64` instantiations.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod checkpoint;
pub mod deformer;
pub mod encoder;
mod error;
pub mod flow;
pub mod geom;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod random;
mod scalar;
pub mod synthetic;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision instantiations used by the command-line tool.
pub type Mesh = mesh::SurfaceMesh<f64>;
pub type MeshCohort = mesh::Cohort<f64>;
pub type Template = mesh::TemplatePointCloud<f64>;
pub type Correspondences = deformer::CorrespondenceSet<f64>;
pub type Model = training::ShapeModel<f64>;
pub type Uncertainty = uncertainty::UncertaintyMap<f64>;
pub type Pca = metrics::PcaModel<f64>;
pub type Matrix = metrics::CorrespondenceMatrix<f64>;
