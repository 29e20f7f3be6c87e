//! Auditing toolkit for embedding datasets.
//!
//! Measures how strongly protected variables (sex, age, weight, height) and
//! nuisance variables (acquisition site, date) are encoded in per-region
//! embeddings, supports manual cluster delineation on a 2-D t-SNE layout, and
//! runs the downstream bias analyses: cross-region consistency against an
//! independence baseline, framing shifts from image edge profiles, and
//! subgroup learning-lag curves.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the common instantiations.

pub mod cluster_tools;
pub mod data_model;
mod error;
pub mod image_analysis;
pub mod probes;
pub mod report;
mod scalar;
pub mod synth;
pub mod tsne;

pub use error::{Error, Result};
pub use scalar::{Matrix, Scalar};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type AffinityMatrix64 = tsne::AffinityMatrix<f64>;
pub type AffinityMatrix32 = tsne::AffinityMatrix<f32>;
pub type SvmModel64 = probes::SvmModel<f64>;
pub type SvmModel32 = probes::SvmModel<f32>;
pub type RegModel64 = probes::RegModel<f64>;
pub type Image32 = image_analysis::Image<f32>;
pub type Image64 = image_analysis::Image<f64>;
