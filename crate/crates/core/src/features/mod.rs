//! Image ingestion and HOG feature pyramids.

mod hog;
mod image;
mod pyramid;

pub use self::hog::{compute_hog, flip_permutation, FeatureLevel, HOG_DIM};
pub use self::image::{rotate_point, Image};
pub use self::pyramid::{build_pyramid, build_pyramid_with_scales, default_rotations, FeaturePyramid, PyramidConfig};
