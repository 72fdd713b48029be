//! File formats: PLY clouds, camera and catalog JSON, 16-bit mask PNGs with
//! region sidecars, binary image/posterior dumps, and scene packages.

mod json;
mod masks;
mod package;
mod ply;
mod raw;

pub use json::{
    read_cameras, read_catalogs, read_ground_truth, read_labels, read_observations, write_cameras, write_catalogs,
    write_ground_truth, write_json, write_labels, write_observations, Catalogs, GroundTruth, CAMERA_FILE_TOLERANCE,
};
pub use masks::{compose_label_image, read_masks, write_masks, MaskCandidate};
pub use package::{mask_paths, ScenePackage};
pub use ply::{read_ply, read_ply_from, write_ply, write_ply_to, PlyData, PlyFormat};
pub use raw::{read_posteriors, write_color_png, write_depth, write_index, write_posteriors, write_rendered};
