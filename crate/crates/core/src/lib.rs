//! Hierarchical mask-guided point cloud segmentation.
//!
//! Two stages turn 2D masks into 3D labels: a top-view instance pass that
//! assigns each point to the instance mask its projection falls in, and a
//! per-instance part pass that renders surround views, back-projects part
//! masks through a depth-checked KD-tree match, and fuses the per-view
//! evidence with confidence-weighted Bayesian updating before DBSCAN
//! outlier removal.
//!
//! Geometry is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which the CLI uses throughout.
//! Probabilities are always `f64`.

// Validation below uses `!(x > 0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dbscan;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod image;
pub mod io;
pub mod kdtree;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod projection;
pub mod renderer;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3d = linalg::Vec3<f64>;
pub type Cloud = model::PointCloud<f64>;
pub type CloudF32 = model::PointCloud<f32>;
pub type Camera = model::CameraView<f64>;
pub type CameraF32 = model::CameraView<f32>;
pub type Rendered = renderer::RenderedView<f64>;
pub type Tree = kdtree::KdTree<f64>;
