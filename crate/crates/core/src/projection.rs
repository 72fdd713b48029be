//! Pinhole projection, top-view instance assignment and depth-checked
//! back-projection of part masks onto instance points.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kdtree::KdTree;
use crate::linalg::Vec3;
use crate::model::{CameraView, PointCloud};
use crate::renderer::RenderedView;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection<T> {
    InFront { u: T, v: T, z: T },
    Behind,
}

impl<T: Real> Projection<T> {
    /// Nearest pixel, if it lies inside a `width × height` image.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        match *self {
            Projection::InFront { u, v, .. } => {
                let (x, y) = (u.round(), v.round());
                let inside = x >= T::zero() && y >= T::zero() && x < T::lit(width as f64) && y < T::lit(height as f64);
                inside.then(|| (x.to_usize().unwrap(), y.to_usize().unwrap()))
            }
            Projection::Behind => None,
        }
    }
}

/// `π(R·X + t)`.
pub fn project<T: Real>(view: &CameraView<T>, x: Vec3<T>) -> Projection<T> {
    let c = view.to_camera(x);
    if c.z <= T::zero() {
        return Projection::Behind;
    }
    Projection::InFront {
        u: view.fx * c.x / c.z + view.cx,
        v: view.fy * c.y / c.z + view.cy,
        z: c.z,
    }
}

/// World point seen at pixel `(u, v)` with camera-frame depth `d`:
/// `R⁻¹(π⁻¹(u, v, d) − t)`.
pub fn unproject<T: Real>(view: &CameraView<T>, u: T, v: T, d: T) -> Result<Vec3<T>> {
    if !(d > T::zero()) {
        return Err(Error::NonPositiveDepth(d.to_f64().unwrap_or(f64::NAN)));
    }
    let cam = Vec3::new(d * (u - view.cx) / view.fx, d * (v - view.cy) / view.fy, d);
    Ok(view.to_world(cam))
}

/// Pixel rectangle `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as u64, y as u64);
        x >= self.x as u64
            && y >= self.y as u64
            && x < self.x as u64 + self.w as u64
            && y < self.y as u64 + self.h as u64
    }
}

/// One detected region of a mask image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: u32,
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: PixelRect,
}

/// Single-valued label image of one view plus its region records.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    view_id: u32,
    labels: Image<u32>,
    regions: Vec<Region>,
    areas: BTreeMap<u32, usize>,
}

impl MaskSet {
    /// Validates that every nonzero pixel has exactly one region record,
    /// every record has pixels, and bboxes contain their pixels.
    pub fn new(view_id: u32, labels: Image<u32>, regions: Vec<Region>) -> Result<Self> {
        let mut by_id: BTreeMap<u32, usize> = BTreeMap::new();
        for (k, r) in regions.iter().enumerate() {
            if r.region_id == 0 {
                return Err(Error::InvalidMask("region id 0 is reserved for background".into()));
            }
            if !(0.0..=1.0).contains(&r.confidence) {
                return Err(Error::InvalidMask(format!(
                    "region {} confidence {} outside [0,1]",
                    r.region_id, r.confidence
                )));
            }
            if by_id.insert(r.region_id, k).is_some() {
                return Err(Error::InvalidMask(format!("duplicate region id {}", r.region_id)));
            }
        }
        let mut areas: BTreeMap<u32, usize> = BTreeMap::new();
        let w = labels.width();
        for (i, &id) in labels.as_slice().iter().enumerate() {
            if id == 0 {
                continue;
            }
            let Some(&k) = by_id.get(&id) else {
                return Err(Error::PixelsWithoutRegion(id));
            };
            if !regions[k].bbox.contains(i % w, i / w) {
                return Err(Error::InvalidMask(format!("region {id} has pixels outside its bbox")));
            }
            *areas.entry(id).or_default() += 1;
        }
        if let Some(r) = regions.iter().find(|r| !areas.contains_key(&r.region_id)) {
            return Err(Error::RegionWithoutPixels(r.region_id));
        }
        Ok(Self {
            view_id,
            labels,
            regions,
            areas,
        })
    }

    /// Builds a mask set from a label image and `(region_id, class_id,
    /// confidence)` records, computing tight bboxes. Records without pixels
    /// are dropped.
    pub fn from_labels(view_id: u32, labels: Image<u32>, records: &[(u32, u32, f64)]) -> Result<Self> {
        let boxes = tight_boxes(&labels);
        let regions = records
            .iter()
            .filter_map(|&(region_id, class_id, confidence)| {
                boxes.get(&region_id).map(|&bbox| Region {
                    region_id,
                    class_id,
                    confidence,
                    bbox,
                })
            })
            .collect();
        Self::new(view_id, labels, regions)
    }

    /// Mask set with no regions.
    pub fn empty(view_id: u32, width: usize, height: usize) -> Self {
        Self {
            view_id,
            labels: Image::filled(width, height, 0),
            regions: Vec::new(),
            areas: BTreeMap::new(),
        }
    }

    #[inline]
    pub fn view_id(&self) -> u32 {
        self.view_id
    }

    #[inline]
    pub fn labels(&self) -> &Image<u32> {
        &self.labels
    }

    #[inline]
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn size(&self) -> (usize, usize) {
        self.labels.size()
    }

    pub fn region(&self, region_id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.region_id == region_id)
    }

    pub fn area(&self, region_id: u32) -> usize {
        self.areas.get(&region_id).copied().unwrap_or(0)
    }

    pub fn into_parts(self) -> (u32, Image<u32>, Vec<Region>) {
        (self.view_id, self.labels, self.regions)
    }
}

/// Tight bounding rectangle of every nonzero label.
pub fn tight_boxes(labels: &Image<u32>) -> BTreeMap<u32, PixelRect> {
    let mut ext: BTreeMap<u32, (usize, usize, usize, usize)> = BTreeMap::new();
    for (y, row) in labels.rows().enumerate() {
        for (x, &id) in row.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let e = ext.entry(id).or_insert((x, y, x, y));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
        }
    }
    ext.into_iter()
        .map(|(id, (x0, y0, x1, y1))| {
            (
                id,
                PixelRect {
                    x: x0 as u32,
                    y: y0 as u32,
                    w: (x1 - x0 + 1) as u32,
                    h: (y1 - y0 + 1) as u32,
                },
            )
        })
        .collect()
}

/// Soft class evidence one view contributes to one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point_id: u32,
    pub view_id: u32,
    pub class_id: u32,
    /// Detector confidence of the source region.
    pub q: f64,
    pub region_id: u32,
}

/// KD match radius and depth-consistency tolerance for back-projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig<T> {
    pub epsilon: T,
    pub depth_delta: T,
}

impl<T: Real> MatchConfig<T> {
    pub fn new(epsilon: T, depth_delta: T) -> Result<Self> {
        if !(epsilon > T::zero() && depth_delta > T::zero()) {
            return Err(Error::InvalidConfig("epsilon and depth_delta must be positive".into()));
        }
        Ok(Self { epsilon, depth_delta })
    }

    /// `ε = 2·s`, `depth_delta = 4·s` for median nearest-neighbor spacing `s`.
    pub fn from_spacing(spacing: T) -> Result<Self> {
        Self::new(T::lit(2.0) * spacing, T::lit(4.0) * spacing)
    }
}

/// Instance id of every point: the region id under its top-view projection,
/// or 0 when the point is behind the camera, off-image, or on background.
/// No visibility test is applied.
pub fn assign_instances<T: Real>(cloud: &PointCloud<T>, top_view: &CameraView<T>, masks: &MaskSet) -> Result<Vec<u32>> {
    if masks.size() != top_view.size() {
        return Err(Error::ResolutionMismatch {
            expected: top_view.size(),
            got: masks.size(),
        });
    }
    let (w, h) = top_view.size();
    let labels = masks.labels();
    Ok(cloud
        .positions()
        .par_iter()
        .map(|&p| project(top_view, p).pixel(w, h).map_or(0, |(x, y)| labels.get(x, y)))
        .collect())
}

/// Lifts every labeled pixel with finite depth to a query point, matches it
/// to its nearest instance point, and keeps matches that pass both the
/// distance and depth-consistency tests. At most one observation per point
/// (the closest match); output is sorted by point id.
pub fn backproject_view<T: Real>(
    instance: &PointCloud<T>,
    rendered: &RenderedView<T>,
    masks: &MaskSet,
    config: &MatchConfig<T>,
    tree: &KdTree<T>,
) -> Result<Vec<Observation>> {
    if masks.size() != rendered.size() {
        return Err(Error::ResolutionMismatch {
            expected: rendered.size(),
            got: masks.size(),
        });
    }
    let view = &rendered.view;
    let (w, _) = rendered.size();
    let eps2 = config.epsilon * config.epsilon;
    let classes: BTreeMap<u32, (u32, f64)> = masks
        .regions()
        .iter()
        .map(|r| (r.region_id, (r.class_id, r.confidence)))
        .collect();

    let mut candidates: Vec<(u32, T, usize, u32)> = masks
        .labels()
        .as_slice()
        .par_chunks(w)
        .enumerate()
        .flat_map_iter(|(y, row)| {
            let mut found = Vec::new();
            for (x, &region) in row.iter().enumerate() {
                if region == 0 {
                    continue;
                }
                let d = rendered.depth.get(x, y);
                if !d.is_finite() {
                    continue;
                }
                let Ok(query) = unproject(view, T::lit(x as f64), T::lit(y as f64), d) else {
                    continue;
                };
                let Some(nn) = tree.nearest(query) else {
                    continue;
                };
                if !(nn.distance_squared < eps2) {
                    continue;
                }
                let z = view.to_camera(instance.position(nn.index)).z;
                if (z - d).abs() < config.depth_delta {
                    found.push((nn.index as u32, nn.distance_squared, y * w + x, region));
                }
            }
            found
        })
        .collect();

    candidates.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()).then(a.2.cmp(&b.2)));
    candidates.dedup_by_key(|c| c.0);

    Ok(candidates
        .into_iter()
        .map(|(point_id, _, _, region_id)| {
            let (class_id, q) = classes[&region_id];
            Observation {
                point_id,
                view_id: masks.view_id(),
                class_id,
                q,
                region_id,
            }
        })
        .collect())
}
