//! Scene package directory:
//!
//! ```text
//! cloud.ply
//! cameras.json
//! catalog.json
//! gt_labels.json          (optional)
//! masks/view_<id>.png     (+ view_<id>.json)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{CameraView, ClassCatalog, PointCloud};
use crate::projection::MaskSet;
use crate::scalar::Real;

use super::json::{
    read_cameras, read_catalogs, read_ground_truth, write_cameras, write_catalogs, write_ground_truth, Catalogs,
    GroundTruth,
};
use super::masks::{read_masks, write_masks};
use super::ply::{read_ply, write_ply, PlyFormat};

#[derive(Debug, Clone)]
pub struct ScenePackage<T> {
    pub root: PathBuf,
    pub cloud: PointCloud<T>,
    pub cameras: Vec<CameraView<T>>,
    pub catalogs: Catalogs,
    pub ground_truth: Option<GroundTruth>,
    /// `(png, sidecar)` per view id; decoded on demand.
    pub masks: BTreeMap<u32, (PathBuf, PathBuf)>,
}

/// Mask files under `dir/masks`, keyed by view id. Every PNG needs a JSON
/// sidecar of the same stem.
pub fn mask_paths(dir: impl AsRef<Path>) -> Result<BTreeMap<u32, (PathBuf, PathBuf)>> {
    let masks_dir = dir.as_ref().join("masks");
    let mut out = BTreeMap::new();
    if !masks_dir.is_dir() {
        return Ok(out);
    }
    let entries = fs::read_dir(&masks_dir).map_err(|e| Error::from(e).at_path(&masks_dir))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some(id) = stem.strip_prefix("view_").and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        let sidecar = path.with_extension("json");
        if !sidecar.is_file() {
            return Err(Error::SchemaError("mask PNG has no JSON sidecar".into()).at_path(&path));
        }
        out.insert(id, (path, sidecar));
    }
    Ok(out)
}

impl<T: Real> ScenePackage<T> {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let cloud = read_ply::<T>(root.join("cloud.ply"))?.cloud;
        let cameras = read_cameras(root.join("cameras.json"))?;
        let catalogs = read_catalogs(root.join("catalog.json"))?;
        let gt_path = root.join("gt_labels.json");
        let ground_truth = if gt_path.is_file() {
            let gt = read_ground_truth(&gt_path)?;
            if gt.labels.len() != cloud.len() {
                return Err(Error::SizeMismatch(cloud.len(), gt.labels.len()).at_path(gt_path));
            }
            Some(gt)
        } else {
            None
        };
        let masks = mask_paths(&root)?;
        if let Some((id, (png, _))) = masks.iter().find(|(id, _)| !cameras.iter().any(|c| c.view_id == **id)) {
            return Err(Error::SchemaError(format!("mask for view {id} has no camera")).at_path(png));
        }
        Ok(Self {
            root,
            cloud,
            cameras,
            catalogs,
            ground_truth,
            masks,
        })
    }

    pub fn camera(&self, view_id: u32) -> Option<&CameraView<T>> {
        self.cameras.iter().find(|c| c.view_id == view_id)
    }

    /// Decodes the masks of `view_id`, or `None` if the package has none.
    pub fn load_masks(&self, view_id: u32, catalog: &ClassCatalog) -> Result<Option<MaskSet>> {
        let Some((png, sidecar)) = self.masks.get(&view_id) else {
            return Ok(None);
        };
        let masks = read_masks(png, sidecar, catalog)?;
        if masks.view_id() != view_id {
            return Err(Error::SchemaError(format!(
                "sidecar declares view {} but file is for view {view_id}",
                masks.view_id()
            ))
            .at_path(sidecar));
        }
        Ok(Some(masks))
    }

    /// Writes the cloud, cameras, catalogs and ground truth into `dir`.
    /// Masks are added with [`ScenePackage::write_view_masks`].
    pub fn write(
        dir: impl AsRef<Path>,
        cloud: &PointCloud<T>,
        cameras: &[CameraView<T>],
        catalogs: &Catalogs,
        ground_truth: Option<&GroundTruth>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        write_ply(dir.join("cloud.ply"), cloud, None, PlyFormat::BinaryLittleEndian)?;
        write_cameras(dir.join("cameras.json"), cameras)?;
        write_catalogs(dir.join("catalog.json"), catalogs)?;
        if let Some(gt) = ground_truth {
            write_ground_truth(dir.join("gt_labels.json"), gt)?;
        }
        Ok(())
    }

    pub fn write_view_masks(dir: impl AsRef<Path>, masks: &MaskSet, catalog: &ClassCatalog) -> Result<()> {
        let masks_dir = dir.as_ref().join("masks");
        fs::create_dir_all(&masks_dir).map_err(|e| Error::from(e).at_path(&masks_dir))?;
        let id = masks.view_id();
        write_masks(
            masks_dir.join(format!("view_{id}.png")),
            masks_dir.join(format!("view_{id}.json")),
            masks,
            catalog,
        )
    }
}
