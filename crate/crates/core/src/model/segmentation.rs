use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels of one point. Id 0 means unassigned (instance) or unlabeled (class).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointLabel {
    pub instance_id: u32,
    pub class_id: u32,
    pub confidence: f64,
}

impl PointLabel {
    pub const UNLABELED: PointLabel = PointLabel {
        instance_id: 0,
        class_id: 0,
        confidence: 0.0,
    };
}

/// One record per point of the segmented cloud, indexed by point id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentationResult {
    labels: Vec<PointLabel>,
}

impl SegmentationResult {
    pub fn new(labels: Vec<PointLabel>) -> Result<Self> {
        for (i, l) in labels.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.confidence) {
                return Err(Error::InvalidSegmentation(format!(
                    "point {i}: confidence {} outside [0,1]",
                    l.confidence
                )));
            }
            if l.class_id > 0 && !(l.confidence > 0.0) {
                return Err(Error::InvalidSegmentation(format!(
                    "point {i}: labeled class {} with zero confidence",
                    l.class_id
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn unlabeled(n: usize) -> Self {
        Self {
            labels: vec![PointLabel::UNLABELED; n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn labels(&self) -> &[PointLabel] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, point_id: usize) -> PointLabel {
        self.labels[point_id]
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.labels.iter().map(|l| l.class_id)
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.labels.iter().map(|l| l.instance_id)
    }

    /// Clears the class of `point_id`, keeping its instance.
    pub fn unlabel(&mut self, point_id: usize) {
        let l = &mut self.labels[point_id];
        l.class_id = 0;
        l.confidence = 0.0;
    }

    pub fn into_labels(self) -> Vec<PointLabel> {
        self.labels
    }
}
