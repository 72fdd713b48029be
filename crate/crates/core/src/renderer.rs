//! Z-buffered disc splatting of point clouds, the scale-adaptive splat
//! radius, and camera placement for the top view and per-instance views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::model::{CameraView, PointCloud};
use crate::scalar::Real;

/// Empty index pixel.
pub const BACKGROUND_INDEX: i32 = -1;

const BAND_ROWS: usize = 32;
const DEFAULT_COLOR: [u8; 3] = [178, 178, 178];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Desired point size in pixels.
    pub r_px: f64,
    /// Side of the square output image in pixels.
    pub resolution: usize,
    /// Lower clamp for [`adaptive_radius`], scene units.
    pub min_radius: f64,
    /// Points with camera-frame depth at or below this are skipped.
    pub z_near: f64,
    /// Full field of view of generated cameras, degrees.
    pub fov_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            r_px: 3.0,
            resolution: 1024,
            min_radius: 1e-6,
            z_near: 1e-4,
            fov_deg: 60.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=16.0).contains(&self.r_px) {
            return Err(Error::InvalidConfig(format!("r_px {} outside [1, 16]", self.r_px)));
        }
        if !(64..=8192).contains(&self.resolution) {
            return Err(Error::InvalidConfig(format!(
                "resolution {} outside [64, 8192]",
                self.resolution
            )));
        }
        if !(self.min_radius > 0.0 && self.z_near > 0.0) {
            return Err(Error::InvalidConfig("min_radius and z_near must be positive".into()));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return Err(Error::InvalidConfig(format!("fov {} outside (1, 179)", self.fov_deg)));
        }
        Ok(())
    }

    /// Focal length giving the configured field of view on a square image.
    pub fn focal_length(&self) -> f64 {
        self.resolution as f64 / (2.0 * (self.fov_deg.to_radians() / 2.0).tan())
    }
}

/// Color, depth and front-most point index of one rendered camera.
#[derive(Debug, Clone)]
pub struct RenderedView<T> {
    pub view: CameraView<T>,
    pub color: Image<[u8; 3]>,
    /// Camera-frame z of the front-most splat, `+inf` where empty.
    pub depth: Image<T>,
    /// Point id of the front-most splat, [`BACKGROUND_INDEX`] where empty.
    pub index: Image<i32>,
}

impl<T: Real> RenderedView<T> {
    pub fn size(&self) -> (usize, usize) {
        self.index.size()
    }

    pub fn occupied_pixels(&self) -> usize {
        self.index.as_slice().iter().filter(|&&i| i >= 0).count()
    }
}

/// World-space splat radius `r_px · s / (I · ρ)`, clamped below at `min_radius`.
pub fn adaptive_radius<T: Real>(r_px: T, resolution: T, extent: T, density: T, min_radius: T) -> Result<T> {
    if !(r_px > T::zero()) {
        return Err(Error::NonPositiveInput("r_px"));
    }
    if !(resolution > T::zero()) {
        return Err(Error::NonPositiveInput("resolution"));
    }
    if !(extent > T::zero()) {
        return Err(Error::NonPositiveInput("extent"));
    }
    if !(density > T::zero()) {
        return Err(Error::NonPositiveInput("density"));
    }
    Ok((r_px * extent / (resolution * density)).max(min_radius))
}

/// Points per cubic centimeter of the bounding box. Positions are in meters;
/// each box side is floored at 1 cm.
pub fn estimate_density<T: Real>(cloud: &PointCloud<T>) -> Result<T> {
    if cloud.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: cloud.len(),
        });
    }
    let ext = cloud.bounding_box().expect("non-empty").extent();
    let cm = T::lit(100.0);
    let side = |e: T| (e * cm).max(T::one());
    let volume = side(ext.x) * side(ext.y) * side(ext.z);
    Ok(T::lit(cloud.len() as f64) / volume)
}

/// Dimensionless density that makes [`adaptive_radius`] return the median
/// nearest-neighbor spacing: `ρ = r_px · s / (I · spacing)`. Splats then
/// just close the gaps between neighboring surface samples at any scale.
pub fn spacing_density<T: Real>(r_px: T, resolution: T, extent: T, median_spacing: T) -> Result<T> {
    if !(median_spacing > T::zero()) {
        return Err(Error::NonPositiveInput("median spacing"));
    }
    if !(resolution > T::zero()) {
        return Err(Error::NonPositiveInput("resolution"));
    }
    Ok(r_px * extent / (resolution * median_spacing))
}

#[derive(Clone, Copy)]
struct Splat<T> {
    cu: i64,
    cv: i64,
    radius: i64,
    z: T,
    id: i32,
}

/// Splats every point in front of the camera as a flat disc of pixel radius
/// `max(1, round(radius·fx/z))`. Per pixel the smallest z wins; exact ties go
/// to the lower point id. Output is independent of thread count.
pub fn render<T: Real>(
    cloud: &PointCloud<T>,
    view: &CameraView<T>,
    radius: T,
    config: &RenderConfig,
) -> RenderedView<T> {
    let (w, h) = view.size();
    let z_near = T::lit(config.z_near);
    let colors = cloud.colors();

    let splats: Vec<Splat<T>> = cloud
        .positions()
        .par_iter()
        .enumerate()
        .filter_map(|(id, &p)| {
            let c = view.to_camera(p);
            if !(c.z > z_near) {
                return None;
            }
            let u = view.fx * c.x / c.z + view.cx;
            let v = view.fy * c.y / c.z + view.cy;
            let r = (radius * view.fx / c.z).round().max(T::one());
            let (cu, cv, r) = (u.round().to_i64()?, v.round().to_i64()?, r.to_i64()?);
            let (wi, hi) = (w as i64, h as i64);
            if cu + r < 0 || cv + r < 0 || cu - r >= wi || cv - r >= hi {
                return None;
            }
            Some(Splat {
                cu,
                cv,
                radius: r,
                z: c.z,
                id: id as i32,
            })
        })
        .collect();

    // Bin splats by the row bands they touch.
    let n_bands = h.div_ceil(BAND_ROWS);
    let mut bands: Vec<Vec<usize>> = vec![Vec::new(); n_bands];
    for (k, s) in splats.iter().enumerate() {
        let y0 = (s.cv - s.radius).max(0) as usize / BAND_ROWS;
        let y1 = ((s.cv + s.radius).min(h as i64 - 1)) as usize / BAND_ROWS;
        for band in &mut bands[y0..=y1] {
            band.push(k);
        }
    }

    let mut depth = Image::filled(w, h, T::infinity());
    let mut index = Image::filled(w, h, BACKGROUND_INDEX);
    depth
        .as_mut_slice()
        .par_chunks_mut(BAND_ROWS * w)
        .zip(index.as_mut_slice().par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(b, (dband, iband))| {
            let row0 = (b * BAND_ROWS) as i64;
            let rows = (dband.len() / w) as i64;
            for &k in &bands[b] {
                let s = splats[k];
                let r2 = s.radius * s.radius;
                let ya = (s.cv - s.radius).max(row0);
                let yb = (s.cv + s.radius).min(row0 + rows - 1);
                for y in ya..=yb {
                    let dy = y - s.cv;
                    let half = isqrt(r2 - dy * dy);
                    let xa = (s.cu - half).max(0);
                    let xb = (s.cu + half).min(w as i64 - 1);
                    let base = (y - row0) as usize * w;
                    for x in xa..=xb {
                        let at = base + x as usize;
                        let cur = dband[at];
                        if s.z < cur || (s.z == cur && s.id < iband[at]) {
                            dband[at] = s.z;
                            iband[at] = s.id;
                        }
                    }
                }
            }
        });

    let color = index.map(|i| {
        if i < 0 {
            [0, 0, 0]
        } else {
            match colors {
                Some(c) => c[i as usize].map(|v| (v * 255.0).round() as u8),
                None => DEFAULT_COLOR,
            }
        }
    });

    RenderedView {
        view: view.clone(),
        color,
        depth,
        index,
    }
}

#[inline]
fn isqrt(v: i64) -> i64 {
    let mut r = (v as f64).sqrt() as i64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Bounding-sphere center and radius about the centroid.
fn bounding_sphere<T: Real>(cloud: &PointCloud<T>) -> Option<(Vec3<T>, T)> {
    let c = cloud.centroid()?;
    let r = cloud.positions().iter().map(|p| p.distance(c)).fold(T::zero(), T::max);
    Some((c, r))
}

/// `n_ring` cameras on a 30° elevation ring around the instance centroid,
/// followed by one top-down camera. View ids are `first_view_id + k`.
pub fn sample_part_views<T: Real>(
    instance: &PointCloud<T>,
    n_ring: usize,
    config: &RenderConfig,
    first_view_id: u32,
) -> Result<Vec<CameraView<T>>> {
    if n_ring == 0 {
        return Err(Error::InvalidConfig("n_ring must be at least 1".into()));
    }
    let (center, r) = bounding_sphere(instance).ok_or(Error::EmptyInstance)?;
    let focal = T::lit(config.focal_length());
    let half_fov = T::lit(config.fov_deg.to_radians() / 2.0);
    let r = r.max(T::lit(1e-3));
    let distance = T::lit(1.2) * r / half_fov.sin();
    let elevation = T::lit(30f64.to_radians());
    let up = Vec3::new(T::zero(), T::zero(), T::one());
    let res = config.resolution;

    let mut views = Vec::with_capacity(n_ring + 1);
    for k in 0..n_ring {
        let az = T::lit(std::f64::consts::TAU * k as f64 / n_ring as f64);
        let dir = Vec3::new(elevation.cos() * az.cos(), elevation.cos() * az.sin(), elevation.sin());
        views.push(CameraView::look_at(
            first_view_id + k as u32,
            res,
            res,
            focal,
            center + dir * distance,
            center,
            up,
        )?);
    }
    views.push(CameraView::look_at(
        first_view_id + n_ring as u32,
        res,
        res,
        focal,
        center + up * distance,
        center,
        Vec3::new(T::zero(), T::one(), T::zero()),
    )?);
    Ok(views)
}

/// Downward-looking pinhole camera over the scene centroid, high enough that
/// the horizontal bounding rectangle fits with a 1.1 margin.
pub fn make_top_view<T: Real>(scene: &PointCloud<T>, config: &RenderConfig, view_id: u32) -> Result<CameraView<T>> {
    let c = scene.centroid().ok_or(Error::EmptyInstance)?;
    let bb = scene.bounding_box().expect("non-empty");
    let half = (bb.max.x - c.x)
        .max(c.x - bb.min.x)
        .max(bb.max.y - c.y)
        .max(c.y - bb.min.y);
    let tan_half = T::lit((config.fov_deg.to_radians() / 2.0).tan());
    let mut height = T::lit(1.1) * half / tan_half;
    if !(height > T::lit(1e-3)) {
        height = T::one();
    }
    let eye = Vec3::new(c.x, c.y, bb.max.z + height);
    let res = config.resolution;
    CameraView::look_at(
        view_id,
        res,
        res,
        T::lit(config.focal_length()),
        eye,
        Vec3::new(c.x, c.y, bb.max.z),
        Vec3::new(T::zero(), T::one(), T::zero()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat3;
    use crate::projection::{project, Projection};

    fn camera(size: usize) -> CameraView<f64> {
        CameraView::new(
            0,
            size,
            size,
            500.0,
            500.0,
            256.0,
            256.0,
            Mat3::identity(),
            Vec3::zero(),
        )
        .unwrap()
    }

    #[test]
    fn spacing_density_gives_spacing_radius() {
        let rho: f64 = spacing_density(3.0, 1024.0, 2.0, 0.01).unwrap();
        let r = adaptive_radius(3.0, 1024.0, 2.0, rho, 1e-6).unwrap();
        assert!((r - 0.01).abs() < 1e-15);
        assert!(spacing_density(3.0, 1024.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn adaptive_radius_examples() {
        assert_eq!(adaptive_radius(3.0, 1024.0, 4.0, 1.0, 1e-6).unwrap(), 0.01171875);
        let r: f64 = adaptive_radius(2.0, 1024.0, 1.024, 2.0, 1e-6).unwrap();
        assert!((r - 0.001).abs() < 1e-15);
        assert!(matches!(
            adaptive_radius(3.0, 1024.0, 4.0, 0.0, 1e-6),
            Err(Error::NonPositiveInput(_))
        ));
        assert_eq!(adaptive_radius(1.0, 1024.0, 1e-9, 1.0, 1e-6).unwrap(), 1e-6);
    }

    #[test]
    fn density_examples() {
        let grid: Vec<_> = (0..10)
            .flat_map(|i| {
                (0..10).flat_map(move |j| (0..10).map(move |k| Vec3::new(i as f64, j as f64, k as f64) * (0.1 / 9.0)))
            })
            .collect();
        let rho = estimate_density(&PointCloud::new(grid).unwrap()).unwrap();
        assert!((rho - 1.0).abs() < 1e-9);

        let corners: Vec<_> = (0..8)
            .map(|b| Vec3::new((b & 1) as f64, ((b >> 1) & 1) as f64, ((b >> 2) & 1) as f64) * 0.02)
            .collect();
        let rho = estimate_density(&PointCloud::new(corners).unwrap()).unwrap();
        assert!((rho - 1.0).abs() < 1e-9);

        let one = PointCloud::new(vec![Vec3::<f64>::zero()]).unwrap();
        assert!(matches!(estimate_density(&one), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn planar_cloud_density_uses_floor() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.1, 0.0)];
        let rho: f64 = estimate_density(&PointCloud::new(pts).unwrap()).unwrap();
        assert!((rho - 2.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_splat() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 2.0)]).unwrap();
        let cfg = RenderConfig::default();
        let out = render(&cloud, &camera(512), 0.012, &cfg);
        assert_eq!(out.index.get(256, 256), 0);
        assert_eq!(out.depth.get(256, 256), 2.0);
        // radius 0.012 * 500 / 2 = 3 px
        assert_eq!(out.index.get(259, 256), 0);
        assert_eq!(out.index.get(260, 256), BACKGROUND_INDEX);
        assert_eq!(out.index.get(258, 258), 0);
        assert_eq!(out.index.get(259, 259), BACKGROUND_INDEX);
        assert_eq!(out.occupied_pixels(), 29);
    }

    #[test]
    fn nearer_point_wins() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        let out = render(&cloud, &camera(512), 0.001, &RenderConfig::default());
        assert_eq!(out.index.get(256, 256), 1);
        assert_eq!(out.depth.get(256, 256), 1.0);
    }

    #[test]
    fn exact_depth_tie_goes_to_lower_id() {
        let p = Vec3::new(0.0, 0.0, 1.0);
        let cloud = PointCloud::new(vec![p, p, p]).unwrap();
        let out = render(&cloud, &camera(512), 0.001, &RenderConfig::default());
        assert_eq!(out.index.get(256, 256), 0);
    }

    #[test]
    fn empty_cloud_renders_background() {
        let out = render(
            &PointCloud::<f64>::empty(),
            &camera(512),
            0.01,
            &RenderConfig::default(),
        );
        assert!(out.index.as_slice().iter().all(|&i| i == BACKGROUND_INDEX));
        assert!(out.depth.as_slice().iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn points_behind_camera_skipped() {
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.0, 0.0, 0.0)]).unwrap();
        let out = render(&cloud, &camera(512), 0.01, &RenderConfig::default());
        assert_eq!(out.occupied_pixels(), 0);
    }

    #[test]
    fn disc_clipped_at_image_border() {
        // center projects to u = -2, disc of radius 5 spills in
        let cloud = PointCloud::new(vec![Vec3::new(-0.516, 0.0, 1.0)]).unwrap();
        let out = render(&cloud, &camera(512), 0.01, &RenderConfig::default());
        assert_eq!(out.index.get(0, 256), 0);
        assert_eq!(out.index.get(3, 256), 0);
        assert_eq!(out.index.get(4, 256), BACKGROUND_INDEX);
    }

    fn unit_sphere(n: usize) -> PointCloud<f64> {
        // Fibonacci sphere
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                Vec3::new(r * t.cos(), y, r * t.sin())
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    fn all_inside(view: &CameraView<f64>, cloud: &PointCloud<f64>) -> bool {
        cloud.positions().iter().all(|&p| match project(view, p) {
            Projection::InFront { u, v, .. } => u >= 0.0 && v >= 0.0 && u < view.width as f64 && v < view.height as f64,
            Projection::Behind => false,
        })
    }

    #[test]
    fn part_views_cover_ring_and_top() {
        let cfg = RenderConfig::default();
        let cloud = unit_sphere(2000);
        let views = sample_part_views(&cloud, 10, &cfg, 1).unwrap();
        assert_eq!(views.len(), 11);
        let c = cloud.centroid().unwrap();
        let dir = |v: &CameraView<f64>| {
            let d = v.center() - c;
            d.y.atan2(d.x)
        };
        let step = (dir(&views[1]) - dir(&views[0])).to_degrees();
        assert!((step - 36.0).abs() < 1e-9);
        for v in &views[..10] {
            let d = (v.center() - c).normalized();
            assert!((d.z.asin().to_degrees() - 30.0).abs() < 1e-9);
        }
        let top = (views[10].center() - c).normalized();
        assert!((top.z - 1.0).abs() < 1e-12);
        assert_eq!(views[10].view_id, 11);
        assert_eq!(views[0].fx, 1024.0 / (2.0 * 30f64.to_radians().tan()));
        assert_eq!(views[0].cx, 512.0);
    }

    #[test]
    fn four_ring_views_contain_unit_sphere() {
        let cloud = unit_sphere(5000);
        let views = sample_part_views(&cloud, 4, &RenderConfig::default(), 0).unwrap();
        assert_eq!(views.len(), 5);
        for v in &views {
            assert!(all_inside(v, &cloud), "view {} clips the instance", v.view_id);
        }
    }

    #[test]
    fn empty_instance_is_rejected() {
        let cfg = RenderConfig::default();
        assert!(matches!(
            sample_part_views(&PointCloud::<f64>::empty(), 4, &cfg, 0),
            Err(Error::EmptyInstance)
        ));
        assert!(matches!(
            make_top_view(&PointCloud::<f64>::empty(), &cfg, 0),
            Err(Error::EmptyInstance)
        ));
    }

    #[test]
    fn top_view_fits_floor() {
        let pts: Vec<_> = (0..=40)
            .flat_map(|i| (0..=40).map(move |j| Vec3::new(i as f64 * 0.25 + 3.0, j as f64 * 0.25 - 7.0, 0.0)))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let view = make_top_view(&cloud, &RenderConfig::default(), 0).unwrap();
        assert!(all_inside(&view, &cloud));
    }

    #[test]
    fn top_view_of_single_point_is_centered() {
        let cloud = PointCloud::<f64>::new(vec![Vec3::new(1.5, -2.0, 0.3)]).unwrap();
        let cfg = RenderConfig::default();
        let view = make_top_view(&cloud, &cfg, 0).unwrap();
        match project(&view, cloud.position(0)) {
            Projection::InFront { u, v, z } => {
                assert!((u - 512.0).abs() < 1e-9 && (v - 512.0).abs() < 1e-9);
                assert!((z - 1.0).abs() < 1e-12);
            }
            Projection::Behind => panic!("point behind top camera"),
        }
    }

    #[test]
    fn render_is_thread_count_independent() {
        let cloud = unit_sphere(20000);
        let cfg = RenderConfig {
            resolution: 256,
            ..Default::default()
        };
        let view = &sample_part_views(&cloud, 3, &cfg, 0).unwrap()[0];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render(&cloud, view, 0.03, &cfg))
        };
        let a = run(1);
        let b = run(7);
        assert_eq!(a.index, b.index);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn depth_matches_front_point() {
        let cloud = unit_sphere(3000);
        let cfg = RenderConfig {
            resolution: 256,
            ..Default::default()
        };
        let view = &sample_part_views(&cloud, 2, &cfg, 0).unwrap()[1];
        let out = render(&cloud, view, 0.02, &cfg);
        for (px, (&i, &d)) in out.index.as_slice().iter().zip(out.depth.as_slice()).enumerate() {
            assert_eq!(i >= 0, d.is_finite(), "pixel {px}");
            if i >= 0 {
                let z = view.to_camera(cloud.position(i as usize)).z;
                assert!((z - d).abs() < 1e-9);
            }
        }
    }
}
