//! Procedural test scenes and oracle masks.
//!
//! Objects are vertical stacks of touching primitive surfaces (box, cylinder,
//! dome), each primitive carrying one part class. Oracle masks are read off
//! the renderer's index image, and [`corrupt_masks`] degrades them with
//! label flips, occluding blobs and boundary dilation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{compose_label_image, Catalogs, GroundTruth, MaskCandidate};
use crate::linalg::Vec3;
use crate::model::{ClassCatalog, PointCloud, PointLabel, SegmentationResult};
use crate::projection::MaskSet;
use crate::renderer::RenderedView;
use crate::scalar::Real;

pub const RA: u32 = 1;
pub const DRESSER: u32 = 2;
pub const BOX: u32 = 3;
pub const GUN: u32 = 4;
pub const STAND: u32 = 5;
pub const BASE: u32 = 6;
pub const PART_CLASS_NAMES: [&str; 6] = ["RA", "DRESSER", "BOX", "GUN", "STAND", "BASE"];

pub const ROBOT_ARM: u32 = 1;
pub const TRANSFER_SYSTEM: u32 = 2;
pub const INSTANCE_CLASS_NAMES: [&str; 2] = ["ROBOT_ARM", "TRANSFER_SYSTEM"];

/// Oracle regions smaller than this many pixels are dropped.
pub const MIN_ORACLE_REGION_PX: usize = 5;

const PLACEMENT_TRIES: usize = 1000;

/// Part colors as 8-bit RGB, so they survive PLY's uchar channels exactly.
const PALETTE: [[u8; 3]; 6] = [
    [217, 84, 26],
    [0, 115, 189],
    [120, 171, 48],
    [163, 20, 46],
    [125, 46, 143],
    [237, 176, 33],
];

pub fn catalogs() -> Catalogs {
    Catalogs {
        instance: ClassCatalog::from_names(&INSTANCE_CLASS_NAMES).expect("static catalog"),
        part: ClassCatalog::from_names(&PART_CLASS_NAMES).expect("static catalog"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_objects: usize,
    pub points_per_object: usize,
    pub min_parts: usize,
    pub max_parts: usize,
    /// Minimum horizontal clearance between object bounding boxes, meters.
    pub gap: f64,
    /// Side of the square ground patch objects are placed on; 0 picks a
    /// size from the object count.
    pub ground_side: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_objects: 3,
            points_per_object: 20_000,
            min_parts: 2,
            max_parts: 4,
            gap: 0.5,
            ground_side: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn new(seed: u64, n_objects: usize, points_per_object: usize) -> Self {
        Self {
            seed,
            n_objects,
            points_per_object,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::InvalidConfig("n_objects must be at least 1".into()));
        }
        if self.points_per_object == 0 {
            return Err(Error::InvalidConfig("points_per_object must be at least 1".into()));
        }
        if !(1 <= self.min_parts && self.min_parts <= self.max_parts && self.max_parts <= 4) {
            return Err(Error::InvalidConfig(format!(
                "parts range {}..={} must lie in 1..=4",
                self.min_parts, self.max_parts
            )));
        }
        if !(self.gap >= 0.0 && self.gap.is_finite() && self.ground_side >= 0.0 && self.ground_side.is_finite()) {
            return Err(Error::InvalidConfig(
                "gap and ground_side must be nonnegative numbers".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Box { hx: f64, hy: f64, h: f64 },
    Cylinder { r: f64, h: f64 },
    Dome { r: f64 },
}

impl Shape {
    fn height(self) -> f64 {
        match self {
            Shape::Box { h, .. } | Shape::Cylinder { h, .. } => h,
            Shape::Dome { r } => r,
        }
    }

    fn covers(self, x: f64, y: f64) -> bool {
        match self {
            Shape::Box { hx, hy, .. } => x.abs() <= hx && y.abs() <= hy,
            Shape::Cylinder { r, .. } | Shape::Dome { r } => x * x + y * y <= r * r,
        }
    }

    /// Horizontal half extents after rotating by `yaw`.
    fn half_extents(self, yaw: f64) -> (f64, f64) {
        match self {
            Shape::Box { hx, hy, .. } => {
                let (s, c) = yaw.sin_cos();
                (c.abs() * hx + s.abs() * hy, s.abs() * hx + c.abs() * hy)
            }
            Shape::Cylinder { r, .. } | Shape::Dome { r } => (r, r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    shape: Shape,
    class_id: u32,
    z0: f64,
}

/// Layout of one generated object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLayout {
    pub instance_id: u32,
    pub instance_class: u32,
    /// Part classes bottom to top.
    pub parts: Vec<u32>,
    pub center: [f64; 2],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub cloud: PointCloud<f64>,
    pub gt: GroundTruth,
    pub objects: Vec<ObjectLayout>,
}

fn random_layers(rng: &mut ChaCha8Rng, n_parts: usize) -> Vec<Layer> {
    // Bottom layer is always the base; the rest is an ordered subset of
    // stand, body, gun.
    let mut upper = [0usize, 1, 2];
    upper.shuffle(rng);
    let mut chosen: Vec<usize> = upper[..n_parts - 1].to_vec();
    chosen.sort_unstable();

    let mut layers = Vec::with_capacity(n_parts);
    let mut z = 0.0;
    let mut push = |layers: &mut Vec<Layer>, shape: Shape, class_id| {
        layers.push(Layer { shape, class_id, z0: z });
        z += shape.height();
    };
    push(
        &mut layers,
        Shape::Box {
            hx: rng.gen_range(0.25..0.4),
            hy: rng.gen_range(0.25..0.4),
            h: rng.gen_range(0.1..0.25),
        },
        BASE,
    );
    for k in chosen {
        match k {
            0 => push(
                &mut layers,
                Shape::Cylinder {
                    r: rng.gen_range(0.1..0.2),
                    h: rng.gen_range(0.3..0.6),
                },
                STAND,
            ),
            1 => {
                let class = [RA, DRESSER, BOX][rng.gen_range(0..3)];
                push(
                    &mut layers,
                    Shape::Box {
                        hx: rng.gen_range(0.15..0.3),
                        hy: rng.gen_range(0.15..0.3),
                        h: rng.gen_range(0.2..0.4),
                    },
                    class,
                )
            }
            _ => push(
                &mut layers,
                Shape::Dome {
                    r: rng.gen_range(0.12..0.25),
                },
                GUN,
            ),
        }
    }
    layers
}

/// Uniform sample on the exposed surface of `layers`: no bottom faces, and
/// top faces minus the footprint of the layer above.
fn sample_surface(rng: &mut ChaCha8Rng, layers: &[Layer], n: usize) -> Vec<(usize, [f64; 3])> {
    #[derive(Clone, Copy)]
    enum Face {
        BoxSide(u8),
        BoxTop,
        CylSide,
        CylTop,
        Dome,
    }
    let mut faces: Vec<(usize, Face, f64)> = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        match l.shape {
            Shape::Box { hx, hy, h } => {
                for s in 0..4u8 {
                    let w = if s < 2 { 2.0 * hx } else { 2.0 * hy };
                    faces.push((i, Face::BoxSide(s), w * h));
                }
                faces.push((i, Face::BoxTop, 4.0 * hx * hy));
            }
            Shape::Cylinder { r, h } => {
                faces.push((i, Face::CylSide, std::f64::consts::TAU * r * h));
                faces.push((i, Face::CylTop, std::f64::consts::PI * r * r));
            }
            Shape::Dome { r } => faces.push((i, Face::Dome, std::f64::consts::TAU * r * r)),
        }
    }
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick = rng.gen_range(0.0..total);
        let &(i, face, _) = faces
            .iter()
            .find(|f| {
                pick -= f.2;
                pick < 0.0
            })
            .unwrap_or(faces.last().expect("at least one face"));
        let l = layers[i];
        let (x, y, z) = match (l.shape, face) {
            (Shape::Box { hx, hy, h }, Face::BoxSide(s)) => {
                let t = rng.gen_range(-1.0..1.0);
                let z = rng.gen_range(0.0..h);
                match s {
                    0 => (t * hx, -hy, z),
                    1 => (t * hx, hy, z),
                    2 => (-hx, t * hy, z),
                    _ => (hx, t * hy, z),
                }
            }
            (Shape::Box { hx, hy, h }, Face::BoxTop) => (rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), h),
            (Shape::Cylinder { r, h }, Face::CylSide) => {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                (r * a.cos(), r * a.sin(), rng.gen_range(0.0..h))
            }
            (Shape::Cylinder { r, h }, Face::CylTop) => {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let rr = r * rng.gen::<f64>().sqrt();
                (rr * a.cos(), rr * a.sin(), h)
            }
            (Shape::Dome { r }, Face::Dome) => {
                // Uniform height is uniform area on a sphere.
                let zz: f64 = rng.gen_range(0.0..1.0);
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                let rho = (1.0 - zz * zz).sqrt();
                (r * rho * a.cos(), r * rho * a.sin(), r * zz)
            }
            _ => unreachable!("face kind matches its shape"),
        };
        let is_top = matches!(face, Face::BoxTop | Face::CylTop);
        if is_top && layers.get(i + 1).is_some_and(|above| above.shape.covers(x, y)) {
            continue;
        }
        out.push((i, [x, y, l.z0 + z]));
    }
    out
}

/// Deterministic scene for `spec`. Objects are placed by rejection sampling
/// on a square ground patch so that their horizontal bounding boxes keep
/// `spec.gap` clearance.
pub fn generate_scene_with(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cell = 2.0 * 0.4 * std::f64::consts::SQRT_2 + spec.gap;
    let side = if spec.ground_side > 0.0 {
        spec.ground_side
    } else {
        (spec.n_objects as f64).sqrt().ceil() * cell * 1.25
    };

    let mut placed: Vec<([f64; 2], [f64; 2])> = Vec::new();
    let mut objects = Vec::with_capacity(spec.n_objects);
    let mut positions = Vec::with_capacity(spec.n_objects * spec.points_per_object);
    let mut colors = Vec::with_capacity(positions.capacity());
    let mut labels = Vec::with_capacity(positions.capacity());
    let mut instance_classes = BTreeMap::new();

    for k in 0..spec.n_objects {
        let instance_id = k as u32 + 1;
        let n_parts = rng.gen_range(spec.min_parts..=spec.max_parts);
        let layers = random_layers(&mut rng, n_parts);
        let instance_class = [ROBOT_ARM, TRANSFER_SYSTEM][rng.gen_range(0..2)];
        let yaw = rng.gen_range(0.0..std::f64::consts::PI);
        let (hx, hy) = layers.iter().fold((0.0f64, 0.0f64), |(a, b), l| {
            let (x, y) = l.shape.half_extents(yaw);
            (a.max(x), b.max(y))
        });
        if side <= 2.0 * hx.max(hy) {
            return Err(Error::PlacementFailure(0));
        }
        let mut center = None;
        for _ in 0..PLACEMENT_TRIES {
            let c = [rng.gen_range(hx..side - hx), rng.gen_range(hy..side - hy)];
            let min = [c[0] - hx, c[1] - hy];
            let max = [c[0] + hx, c[1] + hy];
            let clear = placed.iter().all(|(pmin, pmax)| {
                max[0] + spec.gap <= pmin[0]
                    || pmax[0] + spec.gap <= min[0]
                    || max[1] + spec.gap <= pmin[1]
                    || pmax[1] + spec.gap <= min[1]
            });
            if clear {
                placed.push((min, max));
                center = Some(c);
                break;
            }
        }
        let center = center.ok_or(Error::PlacementFailure(PLACEMENT_TRIES))?;

        let (s, c) = yaw.sin_cos();
        for (layer, [x, y, z]) in sample_surface(&mut rng, &layers, spec.points_per_object) {
            let class_id = layers[layer].class_id;
            positions.push(Vec3::new(center[0] + c * x - s * y, center[1] + s * x + c * y, z));
            colors.push(PALETTE[class_id as usize - 1].map(|c| f32::from(c) / 255.0));
            labels.push(PointLabel {
                instance_id,
                class_id,
                confidence: 1.0,
            });
        }
        instance_classes.insert(instance_id, instance_class);
        objects.push(ObjectLayout {
            instance_id,
            instance_class,
            parts: layers.iter().map(|l| l.class_id).collect(),
            center,
            yaw,
        });
    }

    Ok(SyntheticScene {
        spec: *spec,
        cloud: PointCloud::with_colors(positions, colors)?,
        gt: GroundTruth {
            labels: SegmentationResult::new(labels)?,
            instance_classes,
        },
        objects,
    })
}

/// Scene with the default part range and clearance.
pub fn generate_scene(seed: u64, n_objects: usize, points_per_object: usize) -> Result<SyntheticScene> {
    generate_scene_with(&SceneSpec::new(seed, n_objects, points_per_object))
}

/// Ground-truth masks from a rendered index image. `keys[i]` is the
/// `(region_id, class_id)` of point `i` of the rendered cloud; every region
/// id must map to one class. Confidence is 1 and regions under
/// [`MIN_ORACLE_REGION_PX`] pixels are dropped.
pub fn oracle_masks<T: Real>(rendered: &RenderedView<T>, keys: &[(u32, u32)]) -> Result<MaskSet> {
    let (w, h) = rendered.size();
    let mut labels = Image::filled(w, h, 0u32);
    let mut classes: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
    for (dst, &idx) in labels.as_mut_slice().iter_mut().zip(rendered.index.as_slice()) {
        if idx < 0 {
            continue;
        }
        let &(region, class) = keys
            .get(idx as usize)
            .ok_or(Error::SizeMismatch(idx as usize, keys.len()))?;
        if region == 0 {
            continue;
        }
        let e = classes.entry(region).or_insert((class, 0));
        if e.0 != class {
            return Err(Error::InvalidMask(format!(
                "region {region} maps to classes {} and {class}",
                e.0
            )));
        }
        e.1 += 1;
        *dst = region;
    }
    for px in labels.as_mut_slice() {
        if *px != 0 && classes[px].1 < MIN_ORACLE_REGION_PX {
            *px = 0;
        }
    }
    let records: Vec<(u32, u32, f64)> = classes
        .into_iter()
        .filter(|(_, (_, area))| *area >= MIN_ORACLE_REGION_PX)
        .map(|(r, (c, _))| (r, c, 1.0))
        .collect();
    MaskSet::from_labels(rendered.view.view_id, labels, &records)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    /// Probability that a view receives an occluding blob.
    pub occluder_views: f64,
    /// Per-region probability of relabeling to a random other class.
    pub label_flip_rate: f64,
    /// Square dilation radius applied to every region, pixels.
    pub dilation_px: u32,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("occluder_views", self.occluder_views),
            ("label_flip_rate", self.label_flip_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.occluder_views == 0.0 && self.label_flip_rate == 0.0 && self.dilation_px == 0
    }
}

/// Confidence range of flipped regions and occluders.
const CORRUPT_Q: std::ops::Range<f64> = 0.35..0.65;

/// Degrades oracle masks. Per view, in order: each region is relabeled to a
/// random other class with probability `label_flip_rate`; with probability
/// `occluder_views` a cluster of discs overwrites part of the foreground as
/// a new region of random class; finally every region is dilated and
/// overlaps are resolved by [`compose_label_image`]. Flipped and occluder
/// regions get confidence drawn from `[0.35, 0.65)`. Randomness is seeded
/// by `(spec.seed, view_id)`.
pub fn corrupt_masks(masks: &MaskSet, spec: &CorruptionSpec, catalog: &ClassCatalog) -> Result<MaskSet> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(masks.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(masks.view_id() as u64);
    let (w, h) = masks.size();
    let mut labels = masks.labels().clone();
    let mut records: Vec<(u32, u32, f64)> = masks
        .regions()
        .iter()
        .map(|r| (r.region_id, r.class_id, r.confidence))
        .collect();
    records.sort_by_key(|r| r.0);

    if catalog.len() >= 2 {
        for rec in &mut records {
            if rng.gen::<f64>() < spec.label_flip_rate {
                let others: Vec<u32> = catalog.ids().filter(|&c| c != rec.1).collect();
                rec.1 = others[rng.gen_range(0..others.len())];
                rec.2 = rng.gen_range(CORRUPT_Q);
            }
        }
    }

    let foreground: Vec<usize> = (0..w * h).filter(|&i| labels.as_slice()[i] != 0).collect();
    if rng.gen::<f64>() < spec.occluder_views && !foreground.is_empty() && !catalog.is_empty() {
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        for &i in &foreground {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let size = ((x1 - x0 + 1).max(y1 - y0 + 1)) as f64;
        let seed_px = foreground[rng.gen_range(0..foreground.len())];
        let (sx, sy) = ((seed_px % w) as f64, (seed_px / w) as f64);
        let n_discs = rng.gen_range(3..=6);
        let discs: Vec<(f64, f64, f64)> = (0..n_discs)
            .map(|_| {
                (
                    sx + rng.gen_range(-0.2..0.2) * size,
                    sy + rng.gen_range(-0.2..0.2) * size,
                    rng.gen_range(0.04..0.1) * size,
                )
            })
            .collect();
        let id = records.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let class = catalog.id_at(rng.gen_range(0..catalog.len()));
        let q = rng.gen_range(CORRUPT_Q);
        let data = labels.as_mut_slice();
        for &i in &foreground {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            if discs
                .iter()
                .any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) <= r * r)
            {
                data[i] = id;
            }
        }
        records.push((id, class, q));
    }

    if spec.dilation_px == 0 {
        let present: std::collections::BTreeSet<u32> = labels.as_slice().iter().copied().collect();
        records.retain(|r| present.contains(&r.0));
        return MaskSet::from_labels(masks.view_id(), labels, &records);
    }
    let candidates: Vec<MaskCandidate> = records
        .iter()
        .map(|&(region_id, class_id, confidence)| MaskCandidate {
            region_id,
            class_id,
            confidence,
            pixels: dilate(&labels, region_id, spec.dilation_px as usize),
        })
        .filter(|c| !c.pixels.is_empty())
        .collect();
    compose_label_image(masks.view_id(), w, h, &candidates)
}

/// Pixels within Chebyshev distance `d` of a pixel labeled `id`.
fn dilate(labels: &Image<u32>, id: u32, d: usize) -> Vec<usize> {
    let (w, h) = labels.size();
    let src = labels.as_slice();
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(d);
            let hi = (x + d).min(w - 1);
            horiz[y * w + x] = row[lo..=hi].contains(&id);
        }
    }
    let mut out = Vec::new();
    for y in 0..h {
        let lo = y.saturating_sub(d);
        let hi = (y + d).min(h - 1);
        for x in 0..w {
            if (lo..=hi).any(|yy| horiz[yy * w + x]) {
                out.push(y * w + x);
            }
        }
    }
    out
}
