//! JSON files: cameras, class catalogs, per-point labels and observations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightedObservation;
use crate::linalg::{Mat3, Vec3};
use crate::model::{CameraView, ClassCatalog, ClassEntry, PointLabel, SegmentationResult};
use crate::scalar::Real;

/// Rotation tolerance applied to cameras read from disk.
pub const CAMERA_FILE_TOLERANCE: f64 = 1e-6;

fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let file = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::SchemaError(e.to_string()).at_path(path))
}

/// Pretty-printed JSON with a trailing newline. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_json<V: Serialize + ?Sized>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let path = path.as_ref();
    let run = || -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    };
    run().map_err(|e| e.at_path(path))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    view_id: u32,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CamerasFile {
    views: Vec<CameraRecord>,
}

impl CameraRecord {
    fn into_view<T: Real>(self) -> Result<CameraView<T>> {
        let view = CameraView {
            view_id: self.view_id,
            width: self.width,
            height: self.height,
            fx: T::lit(self.fx),
            fy: T::lit(self.fy),
            cx: T::lit(self.cx),
            cy: T::lit(self.cy),
            rotation: Mat3::from_row_major(self.r.map(T::lit)),
            translation: Vec3::from_array(self.t.map(T::lit)),
        };
        view.validate(T::lit(CAMERA_FILE_TOLERANCE))?;
        Ok(view)
    }

    fn from_view<T: Real>(v: &CameraView<T>) -> Self {
        Self {
            view_id: v.view_id,
            width: v.width,
            height: v.height,
            fx: v.fx.as_f64(),
            fy: v.fy.as_f64(),
            cx: v.cx.as_f64(),
            cy: v.cy.as_f64(),
            r: v.rotation.to_row_major().map(|x| x.as_f64()),
            t: v.translation.to_array().map(|x| x.as_f64()),
        }
    }
}

/// Reads `{"views": [...]}`; rejects duplicate view ids.
pub fn read_cameras<T: Real>(path: impl AsRef<Path>) -> Result<Vec<CameraView<T>>> {
    let path = path.as_ref();
    let file: CamerasFile = read_json(path)?;
    let mut views = Vec::with_capacity(file.views.len());
    for rec in file.views {
        let id = rec.view_id;
        if views.iter().any(|v: &CameraView<T>| v.view_id == id) {
            return Err(Error::SchemaError(format!("duplicate view id {id}")).at_path(path));
        }
        views.push(
            rec.into_view()
                .map_err(|e| e.in_stage("camera", Some(id)).at_path(path))?,
        );
    }
    Ok(views)
}

pub fn write_cameras<T: Real>(path: impl AsRef<Path>, views: &[CameraView<T>]) -> Result<()> {
    let file = CamerasFile {
        views: views.iter().map(CameraRecord::from_view).collect(),
    };
    write_json(path, &file)
}

/// Instance-level and part-level class catalogs of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalogs {
    pub instance: ClassCatalog,
    pub part: ClassCatalog,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogsFile {
    instance_classes: Vec<ClassEntry>,
    part_classes: Vec<ClassEntry>,
}

pub fn read_catalogs(path: impl AsRef<Path>) -> Result<Catalogs> {
    let path = path.as_ref();
    let file: CatalogsFile = read_json(path)?;
    let wrap = |e: Error| e.at_path(path);
    Ok(Catalogs {
        instance: ClassCatalog::new(file.instance_classes).map_err(wrap)?,
        part: ClassCatalog::new(file.part_classes).map_err(wrap)?,
    })
}

pub fn write_catalogs(path: impl AsRef<Path>, catalogs: &Catalogs) -> Result<()> {
    write_json(
        path,
        &CatalogsFile {
            instance_classes: catalogs.instance.entries().to_vec(),
            part_classes: catalogs.part.entries().to_vec(),
        },
    )
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsFile {
    instance_id: Vec<u32>,
    class_id: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<Vec<f64>>,
    /// Ground truth only: instance id -> instance class id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instance_classes: Option<BTreeMap<u32, u32>>,
}

/// Reads per-point labels. Without a `confidence` array, labeled points get
/// confidence 1.
pub fn read_labels(path: impl AsRef<Path>) -> Result<SegmentationResult> {
    read_ground_truth(path).map(|gt| gt.labels)
}

/// Ground-truth labels plus the class of every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: SegmentationResult,
    pub instance_classes: BTreeMap<u32, u32>,
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file: LabelsFile = read_json(path)?;
    let n = file.instance_id.len();
    let bad_len = |m: usize| Error::SchemaError(format!("label arrays differ in length: {n} vs {m}")).at_path(path);
    if file.class_id.len() != n {
        return Err(bad_len(file.class_id.len()));
    }
    if let Some(c) = &file.confidence {
        if c.len() != n {
            return Err(bad_len(c.len()));
        }
    }
    let labels = (0..n)
        .map(|i| PointLabel {
            instance_id: file.instance_id[i],
            class_id: file.class_id[i],
            confidence: match &file.confidence {
                Some(c) => c[i],
                None if file.class_id[i] > 0 => 1.0,
                None => 0.0,
            },
        })
        .collect();
    Ok(GroundTruth {
        labels: SegmentationResult::new(labels).map_err(|e| e.at_path(path))?,
        instance_classes: file.instance_classes.unwrap_or_default(),
    })
}

pub fn write_labels(path: impl AsRef<Path>, labels: &SegmentationResult, with_confidence: bool) -> Result<()> {
    let l = labels.labels();
    write_json(
        path,
        &LabelsFile {
            instance_id: l.iter().map(|p| p.instance_id).collect(),
            class_id: l.iter().map(|p| p.class_id).collect(),
            confidence: with_confidence.then(|| l.iter().map(|p| p.confidence).collect()),
            instance_classes: None,
        },
    )
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let l = gt.labels.labels();
    write_json(
        path,
        &LabelsFile {
            instance_id: l.iter().map(|p| p.instance_id).collect(),
            class_id: l.iter().map(|p| p.class_id).collect(),
            confidence: None,
            instance_classes: Some(gt.instance_classes.clone()),
        },
    )
}

pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<WeightedObservation>> {
    let path = path.as_ref();
    let obs: Vec<WeightedObservation> = read_json(path)?;
    for o in &obs {
        if !(0.0..=1.0).contains(&o.q) || !(0.0..=1.0).contains(&o.alpha) {
            return Err(Error::SchemaError(format!(
                "observation of point {} in view {} has q or alpha outside [0,1]",
                o.point_id, o.view_id
            ))
            .at_path(path));
        }
    }
    Ok(obs)
}

pub fn write_observations(path: impl AsRef<Path>, obs: &[WeightedObservation]) -> Result<()> {
    write_json(path, obs)
}
