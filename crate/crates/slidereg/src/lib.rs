//! Two-stage registration of 2D histology slide images: a brute-force
//! initialized affine alignment refined by LBFGS, followed by a greedy
//! diffeomorphic deformation estimated coarse-to-fine over a
//! multi-resolution pyramid, with a landmark-based evaluation harness.
//!
//! The pipeline mirrors the module layout: [`stains`] removes a stain
//! before registration, [`preprocess`] builds the equal-sized padded
//! working pair, [`affine`] and [`diffeo`] recover the transform, [`warp`]
//! applies it, and [`eval`] scores landmark error.

pub mod affine;
pub mod core;
pub mod diffeo;
pub mod error;
pub mod eval;
pub mod filters;
pub mod io;
pub mod metric;
pub mod preprocess;
pub mod stains;
pub mod warp;

pub use crate::core::{
    default_params, AffineTransform2D, BinaryMask, DisplacementField, LandmarkSet,
    RegistrationParams, RgbImage, ScalarImage,
};
pub use crate::error::{Error, Result};
