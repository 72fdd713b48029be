//! Point-level precision / recall / IoU against ground truth, and the
//! three-arm fusion ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    dbscan_refine_groups, fuse_observations, group_by_point, select_labels, FusionConfig, RefineGroup,
    WeightedObservation,
};
use crate::model::{ClassCatalog, PointCloud, PointLabel, SegmentationResult};
use crate::scalar::Real;

/// Counts over `[unlabeled, catalog classes...]`; row = ground truth,
/// column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_ids: Vec<u32>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn dim(&self) -> usize {
        self.class_ids.len()
    }

    /// Count for ground-truth class `gt` predicted as `pred` (ids, 0 = unlabeled).
    pub fn get(&self, gt: u32, pred: u32) -> u64 {
        let (Some(r), Some(c)) = (self.slot(gt), self.slot(pred)) else {
            return 0;
        };
        self.counts[r * self.dim() + c]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn slot(&self, id: u32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == id)
    }

    fn at(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.dim() + c]
    }
}

/// Tallies `counts[gt][pred]` over all points.
pub fn confusion(
    pred: &SegmentationResult,
    gt: &SegmentationResult,
    catalog: &ClassCatalog,
) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(pred.len(), gt.len()));
    }
    let mut class_ids = vec![0];
    class_ids.extend(catalog.ids());
    let n = class_ids.len();
    let slot = |id: u32| -> Result<usize> {
        if id == 0 {
            Ok(0)
        } else {
            catalog.index_of(id).map(|i| i + 1).ok_or(Error::UnknownClassId(id))
        }
    };
    let mut counts = vec![0u64; n * n];
    for (p, g) in pred.class_ids().zip(gt.class_ids()) {
        counts[slot(g)? * n + slot(p)?] += 1;
    }
    Ok(ConfusionMatrix { class_ids, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u32,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub gt_points: u64,
    pub predicted_points: u64,
}

impl ClassMetrics {
    /// Present in ground truth or prediction.
    pub fn is_defined(&self) -> bool {
        self.gt_points + self.predicted_points > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    /// Mean IoU over defined classes; 0 when none is defined.
    pub miou: f64,
    pub evaluated_points: u64,
}

impl MetricsReport {
    pub fn class(&self, class_id: u32) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and IoU. Unlabeled predictions count as
/// false negatives of their ground-truth class; unlabeled is not itself
/// scored.
pub fn per_class_metrics(cm: &ConfusionMatrix, catalog: &ClassCatalog) -> MetricsReport {
    let n = cm.dim();
    let mut classes = Vec::with_capacity(n - 1);
    for k in 1..n {
        let tp = cm.at(k, k);
        let gt_points: u64 = (0..n).map(|c| cm.at(k, c)).sum();
        let predicted_points: u64 = (0..n).map(|r| cm.at(r, k)).sum();
        let (fp, fn_) = (predicted_points - tp, gt_points - tp);
        let id = cm.class_ids[k];
        classes.push(ClassMetrics {
            class_id: id,
            name: catalog.name_of(id).unwrap_or("?").to_string(),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            iou: ratio(tp, tp + fp + fn_),
            gt_points,
            predicted_points,
        });
    }
    let defined: Vec<f64> = classes.iter().filter(|c| c.is_defined()).map(|c| c.iou).collect();
    let miou = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    MetricsReport {
        classes,
        miou,
        evaluated_points: cm.total(),
    }
}

pub fn evaluate(pred: &SegmentationResult, gt: &SegmentationResult, catalog: &ClassCatalog) -> Result<MetricsReport> {
    Ok(per_class_metrics(&confusion(pred, gt, catalog)?, catalog))
}

/// Fraction of points whose predicted instance, mapped to the ground-truth
/// instance it overlaps most, matches their ground-truth instance.
pub fn instance_accuracy(pred: &[u32], gt: &[u32]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Ok(1.0);
    }
    let mut overlap: BTreeMap<u32, BTreeMap<u32, u64>> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if p != 0 {
            *overlap.entry(p).or_default().entry(g).or_default() += 1;
        }
    }
    let mapping: BTreeMap<u32, u32> = overlap
        .into_iter()
        .map(|(p, counts)| {
            let best = counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(g, _)| g)
                .unwrap_or(0);
            (p, best)
        })
        .collect();
    let correct = pred
        .iter()
        .zip(gt)
        .filter(|(&p, &g)| p != 0 && mapping[&p] == g)
        .count();
    Ok(correct as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    ProjectionOnly,
    Cluster,
    Bayes,
}

impl AblationArm {
    pub const ALL: [AblationArm; 3] = [AblationArm::Bayes, AblationArm::Cluster, AblationArm::ProjectionOnly];

    pub fn label(self) -> &'static str {
        match self {
            AblationArm::ProjectionOnly => "Original",
            AblationArm::Cluster => "Cluster",
            AblationArm::Bayes => "Bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub arms: BTreeMap<AblationArm, MetricsReport>,
}

impl AblationReport {
    pub fn miou(&self, arm: AblationArm) -> f64 {
        self.arms[&arm].miou
    }
}

/// Plurality class of each point's raw observations, ignoring detector
/// confidence and view confidence. Ties go to the lowest class id;
/// confidence is the winning vote share.
pub fn majority_vote(n_points: usize, observations: &[WeightedObservation]) -> Result<SegmentationResult> {
    let groups = group_by_point(n_points, observations)?;
    let labels = groups
        .iter()
        .map(|g| {
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for o in g {
                *votes.entry(o.class_id).or_default() += 1;
            }
            votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map_or(
                PointLabel::UNLABELED,
                |(&class_id, &n)| PointLabel {
                    instance_id: 0,
                    class_id,
                    confidence: n as f64 / g.len() as f64,
                },
            )
        })
        .collect();
    SegmentationResult::new(labels)
}

/// Per-point class predictions of each ablation arm from one shared set of
/// observations.
pub fn ablation_predictions<T: Real>(
    cloud: &PointCloud<T>,
    observations: &[WeightedObservation],
    catalog: &ClassCatalog,
    fusion: &FusionConfig,
    refine: &[RefineGroup<T>],
) -> Result<BTreeMap<AblationArm, SegmentationResult>> {
    let n = cloud.len();
    let projection = majority_vote(n, observations)?;
    let cluster = dbscan_refine_groups(&projection, cloud, refine, fusion.dbscan_min_pts)?;
    let posteriors = fuse_observations(n, observations, catalog)?;
    let bayes = dbscan_refine_groups(
        &select_labels(&posteriors, fusion.tau, catalog),
        cloud,
        refine,
        fusion.dbscan_min_pts,
    )?;
    Ok(BTreeMap::from([
        (AblationArm::ProjectionOnly, projection),
        (AblationArm::Cluster, cluster),
        (AblationArm::Bayes, bayes),
    ]))
}

/// Metrics of the three arms against `gt` over the same observations.
pub fn ablation_run<T: Real>(
    cloud: &PointCloud<T>,
    gt: &SegmentationResult,
    observations: &[WeightedObservation],
    catalog: &ClassCatalog,
    fusion: &FusionConfig,
    refine: &[RefineGroup<T>],
) -> Result<AblationReport> {
    let preds = ablation_predictions(cloud, observations, catalog, fusion, refine)?;
    let arms = preds
        .into_iter()
        .map(|(arm, pred)| Ok((arm, evaluate(&pred, gt, catalog)?)))
        .collect::<Result<_>>()?;
    Ok(AblationReport { arms })
}

/// Plain-text table in percent with two decimals: one row per class,
/// Precision / Recall / IoU column groups, one column per arm. Classes absent
/// from both ground truth and prediction show `-`.
pub fn format_table(columns: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    let name_w = columns
        .first()
        .map(|(_, r)| r.classes.iter().map(|c| c.name.len()).max().unwrap_or(0))
        .unwrap_or(0)
        .max("Objects".len());
    let col_w = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let group_w = columns.len() * (col_w + 1);

    let _ = write!(out, "{:<name_w$} |", "");
    for title in ["Precision", "Recall", "IoU"] {
        let _ = write!(out, "{title:^group_w$}|");
    }
    out.push('\n');
    let _ = write!(out, "{:<name_w$} |", "Objects");
    for _ in 0..3 {
        for (name, _) in columns {
            let _ = write!(out, "{name:>col_w$} ");
        }
        out.push('|');
    }
    out.push('\n');
    out.push_str(&"-".repeat(name_w + 2 + 3 * (group_w + 1)));
    out.push('\n');

    let pct = |v: f64| format!("{:.2}", v * 100.0);
    if let Some((_, first)) = columns.first() {
        for (k, class) in first.classes.iter().enumerate() {
            let _ = write!(out, "{:<name_w$} |", class.name);
            for metric in [
                |c: &ClassMetrics| c.precision,
                |c: &ClassMetrics| c.recall,
                |c: &ClassMetrics| c.iou,
            ] {
                for (_, report) in columns {
                    let c = &report.classes[k];
                    let cell = if c.is_defined() { pct(metric(c)) } else { "-".into() };
                    let _ = write!(out, "{cell:>col_w$} ");
                }
                out.push('|');
            }
            out.push('\n');
        }
    }
    let _ = write!(out, "{:<name_w$} |", "mIoU");
    let _ = write!(out, "{:>w$}|", "", w = 2 * (group_w + 1) - 1);
    for (_, report) in columns {
        let _ = write!(out, "{:>col_w$} ", pct(report.miou));
    }
    out.push_str("|\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(classes: &[u32]) -> SegmentationResult {
        SegmentationResult::new(
            classes
                .iter()
                .map(|&c| PointLabel {
                    instance_id: 1,
                    class_id: c,
                    confidence: if c > 0 { 1.0 } else { 0.0 },
                })
                .collect(),
        )
        .unwrap()
    }

    fn cat(n: usize) -> ClassCatalog {
        ClassCatalog::from_names(&(1..=n).map(|i| format!("c{i}")).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hand_case() {
        let cm = confusion(&seg(&[1, 2, 2, 2]), &seg(&[1, 1, 2, 2]), &cat(2)).unwrap();
        assert_eq!((cm.get(1, 1), cm.get(1, 2), cm.get(2, 2), cm.get(2, 1)), (1, 1, 2, 0));
        let m = per_class_metrics(&cm, &cat(2));
        let c2 = m.class(2).unwrap();
        assert!((c2.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c2.recall, 1.0);
        assert!((c2.iou - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_unlabeled() {
        let gt = seg(&[1, 2, 3, 3, 2]);
        let cm = confusion(&gt, &gt, &cat(3)).unwrap();
        for a in 0..=3 {
            for b in 0..=3 {
                if a != b {
                    assert_eq!(cm.get(a, b), 0);
                }
            }
        }
        let m = per_class_metrics(&cm, &cat(3));
        assert_eq!(m.miou, 1.0);
        assert!(m
            .classes
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.iou == 1.0));

        let none = seg(&[0, 0, 0, 0, 0]);
        let cm = confusion(&none, &gt, &cat(3)).unwrap();
        assert_eq!(cm.get(2, 0), 2);
        assert_eq!(per_class_metrics(&cm, &cat(3)).miou, 0.0);
    }

    #[test]
    fn absent_class_excluded_from_miou() {
        let gt = seg(&[1, 1]);
        let m = evaluate(&gt, &gt, &cat(4)).unwrap();
        assert_eq!(m.miou, 1.0);
        assert!(!m.class(3).unwrap().is_defined());
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            confusion(&seg(&[1]), &seg(&[1, 1]), &cat(1)),
            Err(Error::SizeMismatch(1, 2))
        ));
    }

    #[test]
    fn instance_accuracy_uses_best_overlap() {
        assert_eq!(instance_accuracy(&[5, 5, 7, 7], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(instance_accuracy(&[5, 5, 0, 7], &[1, 1, 2, 2]).unwrap(), 0.75);
    }

    #[test]
    fn majority_vote_tie_and_share() {
        let o = |p, v, c| WeightedObservation {
            point_id: p,
            view_id: v,
            class_id: c,
            q: 1.0,
            region_id: 1,
            alpha: 0.5,
        };
        let r = majority_vote(3, &[o(0, 1, 3), o(0, 2, 2), o(1, 1, 2), o(1, 2, 2), o(1, 3, 1)]).unwrap();
        assert_eq!(r.get(0).class_id, 2);
        assert_eq!(r.get(0).confidence, 0.5);
        assert_eq!(r.get(1).class_id, 2);
        assert!((r.get(1).confidence - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.get(2), PointLabel::UNLABELED);
    }

    #[test]
    fn table_has_one_row_per_class() {
        let names = ["RA", "DRESSER", "BOX", "STAND", "BASE", "GUN"];
        let catalog = ClassCatalog::from_names(&names).unwrap();
        let gt = seg(&[1, 2, 3, 4, 5, 6]);
        let m = evaluate(&gt, &gt, &catalog).unwrap();
        let table = format_table(&[("Bayes", &m), ("Cluster", &m), ("Original", &m)]);
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(rows.len(), 3 + 6 + 1);
        for (name, row) in names.iter().zip(&rows[3..9]) {
            assert!(row.starts_with(name));
            assert_eq!(row.matches("100.00").count(), 9);
        }
    }
}
