//! Confidence-weighted Bayesian fusion of multi-view observations, label
//! selection and DBSCAN outlier removal.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbscan::dbscan;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::model::{
    argmax_with_confidence, normalize, ClassCatalog, LabelDistribution, PointCloud, PointLabel, SegmentationResult,
};
use crate::projection::MaskSet;
use crate::scalar::Real;

pub const AREA_MIN: f64 = 0.001;
pub const AREA_MAX: f64 = 0.5;
/// Boundary term passes with at most this many 4-connected components.
pub const MAX_COMPONENTS: usize = 3;
/// Boundary term passes with `4π·area/perimeter²` at least this.
pub const MIN_COMPACTNESS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Posterior mass required to commit a label.
    pub tau: f64,
    /// Support term is high when a region gathers more points than this.
    pub n_point_threshold: usize,
    /// DBSCAN radius; `None` means 4× the median nearest-neighbor spacing of
    /// each instance.
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            n_point_threshold: 100,
            dbscan_eps: None,
            dbscan_min_pts: 10,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau {} outside (0, 1)", self.tau)));
        }
        if self.n_point_threshold < 1 {
            return Err(Error::InvalidConfig("n_point_threshold must be at least 1".into()));
        }
        if let Some(eps) = self.dbscan_eps {
            if !(eps > 0.0) {
                return Err(Error::InvalidConfig("dbscan_eps must be positive".into()));
            }
        }
        if self.dbscan_min_pts < 1 {
            return Err(Error::InvalidConfig("dbscan_min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Geometry-aware reliability of one region in one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewConfidence {
    /// Normalized mask area, clipped to `[0.001, 0.5]`.
    pub area: f64,
    /// 1.0 with enough supporting points, else 0.5.
    pub support: f64,
    /// 1.0 for a well-formed boundary, else 0.5.
    pub boundary: f64,
    pub alpha: f64,
}

impl ViewConfidence {
    pub fn new(area: f64, support: f64, boundary: f64) -> Self {
        Self {
            area,
            support,
            boundary,
            alpha: (area + support + boundary) / 3.0,
        }
    }
}

/// Soft class distribution of a single detection: `q` on the predicted
/// class, `(1 − q)/(C − 1)` on each other class.
pub fn observation_likelihood(class_id: u32, q: f64, catalog: &ClassCatalog) -> Result<LabelDistribution> {
    let c = catalog.len();
    if c < 2 {
        return Err(Error::SingleClassCatalog);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("detector confidence {q} outside [0,1]")));
    }
    let idx = catalog.index_of(class_id).ok_or(Error::UnknownClassId(class_id))?;
    let rest = (1.0 - q) / (c - 1) as f64;
    let mut probs = vec![rest; c];
    probs[idx] = q;
    LabelDistribution::from_probs(probs)
}

/// Connected components (4-connectivity) and boundary edge count of a region.
pub fn region_shape(masks: &MaskSet, region_id: u32) -> Result<(usize, usize)> {
    let region = masks.region(region_id).ok_or(Error::UnknownRegion(region_id))?;
    let labels = masks.labels();
    let (w, h) = labels.size();
    let b = region.bbox;
    let (x0, y0) = (b.x as usize, b.y as usize);
    let (bw, bh) = (b.w as usize, b.h as usize);
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && labels.get(x as usize, y as usize) == region_id
    };

    let mut seen = vec![false; bw * bh];
    let mut components = 0;
    let mut perimeter = 0;
    let mut stack = Vec::new();
    for y in y0..y0 + bh {
        for x in x0..x0 + bw {
            if labels.get(x, y) != region_id {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            perimeter += [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .filter(|(dx, dy)| !inside(xi + dx, yi + dy))
                .count();
            let k = (y - y0) * bw + (x - x0);
            if seen[k] {
                continue;
            }
            components += 1;
            seen[k] = true;
            stack.push((x, y));
            while let Some((px, py)) = stack.pop() {
                for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (px as i64 + dx, py as i64 + dy);
                    if inside(nx, ny) {
                        let nk = (ny as usize - y0) * bw + (nx as usize - x0);
                        if !seen[nk] {
                            seen[nk] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
        }
    }
    Ok((components, perimeter))
}

/// Area, point-support and boundary terms of one region and their mean.
pub fn view_confidence(
    masks: &MaskSet,
    region_id: u32,
    projected_point_count: usize,
    config: &FusionConfig,
) -> Result<ViewConfidence> {
    let (w, h) = masks.size();
    let area_px = masks.area(region_id);
    let (components, perimeter) = region_shape(masks, region_id)?;
    let area = (area_px as f64 / (w * h) as f64).clamp(AREA_MIN, AREA_MAX);
    let support = if projected_point_count > config.n_point_threshold {
        1.0
    } else {
        0.5
    };
    let compactness = 4.0 * std::f64::consts::PI * area_px as f64 / (perimeter * perimeter) as f64;
    let boundary = if components <= MAX_COMPONENTS && compactness >= MIN_COMPACTNESS {
        1.0
    } else {
        0.5
    };
    Ok(ViewConfidence::new(area, support, boundary))
}

/// Effective per-class likelihood `α·p(x|c) + (1 − α)/C`.
pub fn effective_likelihood(obs: &LabelDistribution, alpha: f64) -> Vec<f64> {
    let uniform = 1.0 / obs.len() as f64;
    obs.probs()
        .iter()
        .map(|&p| alpha * p + (1.0 - alpha) * uniform)
        .collect()
}

/// One recursive update: `posterior ∝ l_c · prior_c`.
pub fn bayes_update(prior: &LabelDistribution, obs: &LabelDistribution, alpha: f64) -> Result<LabelDistribution> {
    if prior.len() != obs.len() {
        return Err(Error::SizeMismatch(prior.len(), obs.len()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0,1]")));
    }
    let weights: Vec<f64> = effective_likelihood(obs, alpha)
        .iter()
        .zip(prior.probs())
        .map(|(l, p)| l * p)
        .collect();
    normalize(&weights)
}

/// Folds [`bayes_update`] over `observations` from a uniform prior.
/// Updates that would zero the posterior are skipped.
pub fn fuse_point(observations: &[(LabelDistribution, f64)], n_classes: usize) -> LabelDistribution {
    let mut posterior = LabelDistribution::uniform(n_classes);
    for (obs, alpha) in observations {
        match bayes_update(&posterior, obs, *alpha) {
            Ok(next) => posterior = next,
            Err(Error::AllZeroWeights) => {}
            Err(e) => panic!("fuse_point got malformed observation: {e}"),
        }
    }
    posterior
}

/// Commits the argmax class where its mass exceeds `tau`; other points stay
/// unlabeled. Instance ids are left at 0.
pub fn select_labels(posteriors: &[LabelDistribution], tau: f64, catalog: &ClassCatalog) -> SegmentationResult {
    let labels = posteriors
        .iter()
        .map(|post| {
            let (class_id, p) = argmax_with_confidence(post, catalog);
            if p > tau {
                PointLabel {
                    instance_id: 0,
                    class_id,
                    confidence: p,
                }
            } else {
                PointLabel::UNLABELED
            }
        })
        .collect();
    SegmentationResult::new(labels).expect("selected labels satisfy invariants")
}

/// Runs DBSCAN separately on each class's points and unlabels the noise.
pub fn dbscan_refine<T: Real>(
    result: &SegmentationResult,
    cloud: &PointCloud<T>,
    eps: T,
    min_pts: usize,
) -> Result<SegmentationResult> {
    if result.len() != cloud.len() {
        return Err(Error::SizeMismatch(result.len(), cloud.len()));
    }
    if !(eps > T::zero()) || min_pts < 1 {
        return Err(Error::InvalidConfig("dbscan needs eps > 0 and min_pts ≥ 1".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in result.labels().iter().enumerate() {
        if l.class_id > 0 {
            by_class.entry(l.class_id).or_default().push(i);
        }
    }
    let groups: Vec<Vec<usize>> = by_class.into_values().collect();
    let noise: Vec<Vec<usize>> = groups
        .par_iter()
        .map(|ids| {
            let pts: Vec<Vec3<T>> = ids.iter().map(|&i| cloud.position(i)).collect();
            dbscan(&pts, eps, min_pts)
                .into_iter()
                .zip(ids)
                .filter(|(l, _)| l.is_noise())
                .map(|(_, &i)| i)
                .collect()
        })
        .collect();
    let mut out = result.clone();
    for i in noise.into_iter().flatten() {
        out.unlabel(i);
    }
    Ok(out)
}

/// Points refined together under one DBSCAN radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineGroup<T> {
    pub point_ids: Vec<u32>,
    pub eps: T,
}

/// [`dbscan_refine`] run independently inside each group. Points outside
/// every group keep their labels.
pub fn dbscan_refine_groups<T: Real>(
    result: &SegmentationResult,
    cloud: &PointCloud<T>,
    groups: &[RefineGroup<T>],
    min_pts: usize,
) -> Result<SegmentationResult> {
    if result.len() != cloud.len() {
        return Err(Error::SizeMismatch(result.len(), cloud.len()));
    }
    let noise: Vec<Vec<u32>> = groups
        .par_iter()
        .map(|g| {
            if let Some(&bad) = g.point_ids.iter().find(|&&i| i as usize >= cloud.len()) {
                return Err(Error::SizeMismatch(bad as usize, cloud.len()));
            }
            let labels = g.point_ids.iter().map(|&i| result.get(i as usize)).collect();
            let refined = dbscan_refine(
                &SegmentationResult::new(labels)?,
                &cloud.subset(&g.point_ids),
                g.eps,
                min_pts,
            )?;
            Ok(g.point_ids
                .iter()
                .zip(refined.labels())
                .filter(|(&i, l)| l.class_id == 0 && result.get(i as usize).class_id != 0)
                .map(|(&i, _)| i)
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = result.clone();
    for i in noise.into_iter().flatten() {
        out.unlabel(i as usize);
    }
    Ok(out)
}

/// An observation with the view confidence of its source region attached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedObservation {
    pub point_id: u32,
    pub view_id: u32,
    pub class_id: u32,
    pub q: f64,
    pub region_id: u32,
    pub alpha: f64,
}

/// Observations grouped per point, each group in ascending view id order.
pub fn group_by_point(n_points: usize, observations: &[WeightedObservation]) -> Result<Vec<Vec<WeightedObservation>>> {
    let mut groups = vec![Vec::new(); n_points];
    for o in observations {
        let slot = groups
            .get_mut(o.point_id as usize)
            .ok_or(Error::SizeMismatch(o.point_id as usize, n_points))?;
        slot.push(*o);
    }
    for g in &mut groups {
        g.sort_by_key(|o| (o.view_id, o.region_id));
    }
    Ok(groups)
}

/// Posterior of every point from its observations; points without
/// observations keep the uniform prior.
pub fn fuse_observations(
    n_points: usize,
    observations: &[WeightedObservation],
    catalog: &ClassCatalog,
) -> Result<Vec<LabelDistribution>> {
    let groups = group_by_point(n_points, observations)?;
    groups
        .par_iter()
        .map(|group| {
            let evidence = group
                .iter()
                .map(|o| Ok((observation_likelihood(o.class_id, o.q, catalog)?, o.alpha)))
                .collect::<Result<Vec<_>>>()?;
            Ok(fuse_point(&evidence, catalog.len()))
        })
        .collect()
}
