//! Hierarchical deformable part model with coherent occlusion states.
//!
//! The model is a two-layer tree: parts connected to each other, and
//! landmarks star-connected to their owning part. Every part carries a
//! shape mixture (crossed with a global viewpoint) and an occlusion pattern
//! over its landmarks. Only landmarks have appearance templates; an occluded
//! landmark contributes no appearance evidence.
//!
//! The crate covers the whole pipeline:
//!
//! - [`features`]: images, HOG cells, scale/rotation pyramids;
//! - [`model`]: topology, parameters, exact scoring and the joint feature map;
//! - [`inference`]: generalized distance transforms and factored max-sum;
//! - [`supervision`]: viewpoint, shape and occlusion labels from annotations;
//! - [`training`]: margin-scaled structured SVM with hard-negative mining;
//! - [`detection`]: sliding-window detection and box-constrained localization;
//! - [`eval`]: landmark remapping, metrics, curves and reports.

pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod inference;
pub mod model;
pub mod supervision;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

/// Score of an impossible configuration.
///
/// IEEE negative infinity is absorbing under addition with finite values.
pub const NEG_INF: f64 = f64::NEG_INFINITY;
