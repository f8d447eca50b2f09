//! Learning continuous driving policies (steering angle, vehicle speed)
//! from camera images and LiDAR point clouds.
//!
//! Three model families share one prediction contract: an image-only CNN
//! regressor, a two-branch network fusing the image with a projected
//! depth map, and a two-branch network whose cloud side is a PointNet-style
//! encoder operating directly on unordered points. Everything runs on a
//! small self-contained f64 autodiff engine; a deterministic synthetic
//! scene generator stands in for road data at desk scale.

// Validation reads like `!(x > 0.0)` on purpose: the negated form also
// rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pointcloud;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
