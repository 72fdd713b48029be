//! Shared domain types: clouds, cameras, class catalogs, label
//! distributions and segmentation records.

mod camera;
mod catalog;
mod cloud;
mod distribution;
mod segmentation;

pub use camera::CameraView;
pub use catalog::{ClassCatalog, ClassEntry};
pub use cloud::{BoundingBox, PointCloud};
pub use distribution::{argmax_with_confidence, normalize, LabelDistribution};
pub use segmentation::{PointLabel, SegmentationResult};
