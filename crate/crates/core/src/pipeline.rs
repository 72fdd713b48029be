//! End-to-end orchestration: top-view instance assignment, per-instance
//! part views, back-projection, fusion and refinement.
//!
//! Each stage is a plain function so the CLI can run them one at a time on
//! intermediate files or all at once; both paths produce the same values.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    dbscan_refine_groups, fuse_observations, select_labels, view_confidence, FusionConfig, RefineGroup,
    WeightedObservation,
};
use crate::io::{Catalogs, GroundTruth, ScenePackage};
use crate::kdtree::{median_nn_spacing, KdTree};
use crate::model::{CameraView, ClassCatalog, LabelDistribution, PointCloud, SegmentationResult};
use crate::projection::{assign_instances, backproject_view, MaskSet, MatchConfig};
use crate::renderer::{
    adaptive_radius, estimate_density, make_top_view, render, sample_part_views, spacing_density, RenderConfig,
    RenderedView,
};
use crate::scalar::Real;
use crate::synth::{corrupt_masks, oracle_masks, CorruptionSpec, SceneSpec};

/// View id of the scene-level top-down camera.
pub const TOP_VIEW_ID: u32 = 0;
/// Part views of instance `i` use ids `i * VIEW_ID_STRIDE + 1 ..`.
pub const VIEW_ID_STRIDE: u32 = 1000;

/// How the point density entering the splat radius is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Density for which the radius equals the median nearest-neighbor
    /// spacing (see [`spacing_density`]).
    Surface,
    /// Points per cm³ of the bounding box.
    Bbox,
    /// Fixed value.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchSettings {
    /// KD match radius; `None` means 2× the instance's median spacing.
    pub epsilon: Option<f64>,
    /// Depth tolerance; `None` means 4× the instance's median spacing.
    pub depth_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub render: RenderConfig,
    pub matching: MatchSettings,
    pub fusion: FusionConfig,
    pub n_ring_views: usize,
    pub density: DensityMode,
    /// Scene generated by `synth`.
    pub scene: SceneSpec,
    /// Degradation applied to oracle part masks.
    pub corruption: CorruptionSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            matching: MatchSettings::default(),
            fusion: FusionConfig::default(),
            n_ring_views: 10,
            density: DensityMode::Surface,
            scene: SceneSpec::default(),
            corruption: CorruptionSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.fusion.validate()?;
        self.scene.validate()?;
        self.corruption.validate()?;
        if !(1..VIEW_ID_STRIDE as usize - 1).contains(&self.n_ring_views) {
            return Err(Error::InvalidConfig(format!(
                "n_ring_views {} outside [1, {}]",
                self.n_ring_views,
                VIEW_ID_STRIDE - 2
            )));
        }
        for (name, v) in [
            ("epsilon", self.matching.epsilon),
            ("depth_delta", self.matching.depth_delta),
        ] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let DensityMode::Fixed(d) = self.density {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig("fixed density must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parses and validates a JSON config; unknown keys are rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()).at_path(path))?;
        config.validate().map_err(|e| e.at_path(path))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskLevel {
    Instance,
    Part,
}

/// Supplies 2D masks for rendered views.
pub trait MaskSource<T: Real>: Sync {
    /// Masks for `rendered`, or `None` when the view has none. `point_ids[i]`
    /// is the scene id of point `i` of the rendered cloud.
    fn masks(&self, level: MaskLevel, rendered: &RenderedView<T>, point_ids: &[u32]) -> Result<Option<MaskSet>>;
}

/// Mask files stored in a scene package.
pub struct PackageMasks<'a, T> {
    pub package: &'a ScenePackage<T>,
}

impl<T: Real> MaskSource<T> for PackageMasks<'_, T> {
    fn masks(&self, level: MaskLevel, rendered: &RenderedView<T>, _point_ids: &[u32]) -> Result<Option<MaskSet>> {
        let catalog = match level {
            MaskLevel::Instance => &self.package.catalogs.instance,
            MaskLevel::Part => &self.package.catalogs.part,
        };
        self.package.load_masks(rendered.view.view_id, catalog)
    }
}

/// Masks derived from ground truth and the index image. Top-view regions
/// are keyed by instance; part-view regions by part class, optionally
/// corrupted.
pub struct OracleMasks<'a> {
    pub gt: &'a GroundTruth,
    pub catalogs: &'a Catalogs,
    pub corruption: CorruptionSpec,
}

impl<T: Real> MaskSource<T> for OracleMasks<'_> {
    fn masks(&self, level: MaskLevel, rendered: &RenderedView<T>, point_ids: &[u32]) -> Result<Option<MaskSet>> {
        let labels = self.gt.labels.labels();
        let label = |i: &u32| {
            labels
                .get(*i as usize)
                .copied()
                .ok_or(Error::SizeMismatch(*i as usize, labels.len()))
        };
        let keys: Vec<(u32, u32)> = match level {
            MaskLevel::Instance => {
                let fallback = self.catalogs.instance.entries().first().map_or(0, |e| e.id);
                point_ids
                    .iter()
                    .map(|i| {
                        let inst = label(i)?.instance_id;
                        Ok((inst, self.gt.instance_classes.get(&inst).copied().unwrap_or(fallback)))
                    })
                    .collect::<Result<_>>()?
            }
            MaskLevel::Part => point_ids
                .iter()
                .map(|i| label(i).map(|l| (l.class_id, l.class_id)))
                .collect::<Result<_>>()?,
        };
        let masks = oracle_masks(rendered, &keys)?;
        Ok(Some(match level {
            MaskLevel::Instance => masks,
            MaskLevel::Part => corrupt_masks(&masks, &self.corruption, &self.catalogs.part)?,
        }))
    }
}

/// Median nearest-neighbor spacing, or `None` below two points.
pub fn cloud_spacing<T: Real>(cloud: &PointCloud<T>) -> Option<T> {
    let tree = KdTree::build(cloud.positions());
    median_nn_spacing(cloud.positions(), &tree)
}

/// Splat radius for `cloud` under the configured density mode. `spacing`
/// is the cloud's median nearest-neighbor spacing.
pub fn splat_radius<T: Real>(cloud: &PointCloud<T>, spacing: T, config: &PipelineConfig) -> Result<T> {
    let r = &config.render;
    let (r_px, res, min_radius) = (T::lit(r.r_px), T::lit(r.resolution as f64), T::lit(r.min_radius));
    let extent = cloud
        .bounding_box()
        .ok_or(Error::EmptyInstance)?
        .max_extent()
        .max(min_radius);
    let density = match config.density {
        DensityMode::Surface => spacing_density(r_px, res, extent, spacing)?,
        DensityMode::Bbox => estimate_density(cloud)?,
        DensityMode::Fixed(d) => T::lit(d),
    };
    adaptive_radius(r_px, res, extent, density, min_radius)
}

/// The package's top camera if it defines one, else a generated camera.
pub fn top_camera<T: Real>(
    cloud: &PointCloud<T>,
    cameras: &[CameraView<T>],
    config: &PipelineConfig,
) -> Result<CameraView<T>> {
    match cameras.iter().find(|c| c.view_id == TOP_VIEW_ID) {
        Some(c) => Ok(c.clone()),
        None => make_top_view(cloud, &config.render, TOP_VIEW_ID),
    }
}

#[derive(Debug, Clone)]
pub struct InstanceStage<T> {
    pub rendered: RenderedView<T>,
    pub masks: Option<MaskSet>,
    /// Instance id per scene point, 0 where unassigned.
    pub instance_ids: Vec<u32>,
}

/// Renders the top view, fetches its masks and assigns instances. Without
/// masks every point stays unassigned.
pub fn run_instances<T: Real>(
    cloud: &PointCloud<T>,
    top: &CameraView<T>,
    scene_spacing: T,
    config: &PipelineConfig,
    source: &dyn MaskSource<T>,
) -> Result<InstanceStage<T>> {
    let stage = |e: Error| e.in_stage("instances", Some(top.view_id));
    let radius = splat_radius(cloud, scene_spacing, config).map_err(stage)?;
    let rendered = render(cloud, top, radius, &config.render);
    let all: Vec<u32> = (0..cloud.len() as u32).collect();
    let masks = source.masks(MaskLevel::Instance, &rendered, &all).map_err(stage)?;
    let instance_ids = match &masks {
        Some(m) => assign_instances(cloud, top, m).map_err(stage)?,
        None => {
            warn!("no masks for top view {}; all points left unassigned", top.view_id);
            vec![0; cloud.len()]
        }
    };
    Ok(InstanceStage {
        rendered,
        masks,
        instance_ids,
    })
}

/// Points and cameras of one assigned instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePlan<T> {
    pub instance_id: u32,
    pub point_ids: Vec<u32>,
    pub views: Vec<CameraView<T>>,
}

/// Groups points by instance and places the ring and top cameras of each.
/// A camera in `known` with a matching view id replaces the generated one.
pub fn plan_part_views<T: Real>(
    cloud: &PointCloud<T>,
    instance_ids: &[u32],
    known: &[CameraView<T>],
    config: &PipelineConfig,
) -> Result<Vec<InstancePlan<T>>> {
    if instance_ids.len() != cloud.len() {
        return Err(Error::SizeMismatch(cloud.len(), instance_ids.len()));
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &inst) in instance_ids.iter().enumerate() {
        if inst > 0 {
            groups.entry(inst).or_default().push(i as u32);
        }
    }
    groups
        .into_iter()
        .map(|(instance_id, point_ids)| {
            let first = instance_id
                .checked_mul(VIEW_ID_STRIDE)
                .and_then(|v| v.checked_add(1))
                .ok_or_else(|| Error::InvalidMask(format!("instance id {instance_id} too large for view ids")))?;
            let sub = cloud.subset(&point_ids);
            let views = sample_part_views(&sub, config.n_ring_views, &config.render, first)
                .map_err(|e| e.in_stage("plan", Some(first)))?
                .into_iter()
                .map(|v| known.iter().find(|k| k.view_id == v.view_id).cloned().unwrap_or(v))
                .collect();
            Ok(InstancePlan {
                instance_id,
                point_ids,
                views,
            })
        })
        .collect()
}

/// Everything one part view produced.
#[derive(Debug, Clone)]
pub struct PartView<T> {
    pub rendered: RenderedView<T>,
    pub masks: Option<MaskSet>,
    /// Observations with scene point ids, sorted by point id.
    pub observations: Vec<WeightedObservation>,
}

/// Renders, masks and back-projects every view of one instance. Views
/// without masks contribute no observations.
pub fn run_instance_parts<T: Real>(
    cloud: &PointCloud<T>,
    plan: &InstancePlan<T>,
    scene_spacing: T,
    config: &PipelineConfig,
    source: &dyn MaskSource<T>,
) -> Result<Vec<PartView<T>>> {
    let sub = cloud.subset(&plan.point_ids);
    let tree = KdTree::build(sub.positions());
    let spacing = median_nn_spacing(sub.positions(), &tree).unwrap_or(scene_spacing);
    let spacing = if spacing > T::zero() { spacing } else { scene_spacing };
    let first_view = plan.views.first().map(|v| v.view_id);
    let radius = splat_radius(&sub, spacing, config).map_err(|e| e.in_stage("parts", first_view))?;
    let defaults = MatchConfig::from_spacing(spacing).map_err(|e| e.in_stage("parts", first_view))?;
    let matching = MatchConfig::new(
        config.matching.epsilon.map_or(defaults.epsilon, T::lit),
        config.matching.depth_delta.map_or(defaults.depth_delta, T::lit),
    )?;

    plan.views
        .par_iter()
        .map(|view| {
            let stage = |e: Error| e.in_stage("parts", Some(view.view_id));
            let rendered = render(&sub, view, radius, &config.render);
            let masks = source
                .masks(MaskLevel::Part, &rendered, &plan.point_ids)
                .map_err(stage)?;
            let Some(m) = &masks else {
                warn!("no masks for view {}; it contributes no observations", view.view_id);
                return Ok(PartView {
                    rendered,
                    masks,
                    observations: Vec::new(),
                });
            };
            let raw = backproject_view(&sub, &rendered, m, &matching, &tree).map_err(stage)?;
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for o in &raw {
                *counts.entry(o.region_id).or_default() += 1;
            }
            let alphas = counts
                .iter()
                .map(|(&region, &n)| Ok((region, view_confidence(m, region, n, &config.fusion)?.alpha)))
                .collect::<Result<BTreeMap<u32, f64>>>()
                .map_err(stage)?;
            let observations = raw
                .into_iter()
                .map(|o| WeightedObservation {
                    point_id: plan.point_ids[o.point_id as usize],
                    view_id: o.view_id,
                    class_id: o.class_id,
                    q: o.q,
                    region_id: o.region_id,
                    alpha: alphas[&o.region_id],
                })
                .collect();
            Ok(PartView {
                rendered,
                masks,
                observations,
            })
        })
        .collect()
}

/// Orders observations by point id, then view id.
pub fn sort_observations(obs: &mut [WeightedObservation]) {
    obs.sort_by_key(|o| (o.point_id, o.view_id, o.region_id));
}

/// One DBSCAN group per assigned instance. The radius is the configured
/// `dbscan_eps`, or 4× the instance's median spacing (falling back to
/// `scene_spacing` for instances under two points).
pub fn refine_groups<T: Real>(
    cloud: &PointCloud<T>,
    instance_ids: &[u32],
    config: &FusionConfig,
    scene_spacing: T,
) -> Vec<RefineGroup<T>> {
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, &inst) in instance_ids.iter().enumerate() {
        if inst > 0 {
            groups.entry(inst).or_default().push(i as u32);
        }
    }
    groups
        .into_values()
        .map(|point_ids| {
            let eps = match config.dbscan_eps {
                Some(eps) => T::lit(eps),
                None => {
                    let spacing = cloud_spacing(&cloud.subset(&point_ids))
                        .filter(|s| *s > T::zero())
                        .unwrap_or(scene_spacing);
                    T::lit(4.0) * spacing
                }
            };
            RefineGroup { point_ids, eps }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedLabels {
    pub posteriors: Vec<LabelDistribution>,
    pub segmentation: SegmentationResult,
}

/// Fuses observations, commits confident labels, strips DBSCAN noise and
/// attaches instance ids.
pub fn run_fusion<T: Real>(
    cloud: &PointCloud<T>,
    instance_ids: &[u32],
    observations: &[WeightedObservation],
    catalog: &ClassCatalog,
    scene_spacing: T,
    config: &PipelineConfig,
) -> Result<FusedLabels> {
    let stage = |e: Error| e.in_stage("fuse", None);
    if instance_ids.len() != cloud.len() {
        return Err(stage(Error::SizeMismatch(cloud.len(), instance_ids.len())));
    }
    let posteriors = fuse_observations(cloud.len(), observations, catalog).map_err(stage)?;
    let selected = select_labels(&posteriors, config.fusion.tau, catalog);
    let groups = refine_groups(cloud, instance_ids, &config.fusion, scene_spacing);
    let refined = dbscan_refine_groups(&selected, cloud, &groups, config.fusion.dbscan_min_pts).map_err(stage)?;
    let labels = refined
        .into_labels()
        .into_iter()
        .zip(instance_ids)
        .map(|(mut l, &inst)| {
            l.instance_id = inst;
            l
        })
        .collect();
    Ok(FusedLabels {
        posteriors,
        segmentation: SegmentationResult::new(labels)?,
    })
}

/// Callback that sees each rendered view and its masks.
pub type ViewSink<'a, T> = dyn FnMut(&RenderedView<T>, Option<&MaskSet>) -> Result<()> + 'a;

/// In-memory result of a full run.
#[derive(Debug, Clone)]
pub struct PipelineRun<T> {
    pub top_view: CameraView<T>,
    pub instance_ids: Vec<u32>,
    pub plans: Vec<InstancePlan<T>>,
    pub observations: Vec<WeightedObservation>,
    pub fused: FusedLabels,
}

/// Runs every stage without touching the filesystem. `on_view` sees each
/// rendered view and its masks (top view first) and may persist them.
pub fn run_pipeline<T: Real>(
    cloud: &PointCloud<T>,
    cameras: &[CameraView<T>],
    catalogs: &Catalogs,
    config: &PipelineConfig,
    source: &dyn MaskSource<T>,
    on_view: &mut ViewSink<T>,
) -> Result<PipelineRun<T>> {
    config.validate()?;
    let scene_spacing = cloud_spacing(cloud).ok_or(Error::TooFewPoints {
        needed: 2,
        got: cloud.len(),
    })?;
    let top_view = top_camera(cloud, cameras, config)?;
    let inst = run_instances(cloud, &top_view, scene_spacing, config, source)?;
    on_view(&inst.rendered, inst.masks.as_ref())?;
    let plans = plan_part_views(cloud, &inst.instance_ids, cameras, config)?;
    let mut observations = Vec::new();
    for plan in &plans {
        for view in run_instance_parts(cloud, plan, scene_spacing, config, source)? {
            on_view(&view.rendered, view.masks.as_ref())?;
            observations.extend(view.observations);
        }
    }
    sort_observations(&mut observations);
    let fused = run_fusion(
        cloud,
        &inst.instance_ids,
        &observations,
        &catalogs.part,
        scene_spacing,
        config,
    )?;
    Ok(PipelineRun {
        top_view,
        instance_ids: inst.instance_ids,
        plans,
        observations,
        fused,
    })
}
