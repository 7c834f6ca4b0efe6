//! Noise-robust aggregation of point sets.
//!
//! The crate implements a hierarchical point-cloud classifier whose
//! neighbourhood aggregation is an MLP mixer over spatially sorted points
//! (axis projection, plane clockwise and distance sorting), alongside the
//! max/mean pooling baselines, a small reverse-mode autodiff engine, noise
//! corruption generators, robustness metrics and a synthetic shape dataset.
//!
//! Module map:
//!
//! - [`geom`]: point clouds, normalization, farthest point sampling, kNN grouping.
//! - [`sort`]: sort keys, permutations and ordered feature assembly.
//! - [`nn`]: dense matrices, the gradient tape, layers, Adam, gradient checks, checkpoints.
//! - [`model`]: mixer aggregation, set abstraction layers and the classifier.
//! - [`corrupt`]: the five noise corruptions at five severities.
//! - [`eval`]: error rates, RmCE, benchmarking and feature-change export.
//! - [`synth`]: analytic shape families used as a desk-scale dataset.
//! - [`io`]: on-disk formats for clouds, datasets and manifests.
//! - [`train`]: the training loop.

pub mod corrupt;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod model;
pub mod nn;
mod par;
pub mod rng;
pub mod sort;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geom::{CenterMode, GroupIndex, Point3, PointCloud};
pub use nn::Matrix;
