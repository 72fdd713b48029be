//! Density-based clustering over 3-d points.

use crate::kdtree::KdTree;
use crate::linalg::Vec3;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbscanLabel {
    Core(u32),
    Border(u32),
    Noise,
}

impl DbscanLabel {
    pub fn is_noise(self) -> bool {
        self == DbscanLabel::Noise
    }

    pub fn cluster(self) -> Option<u32> {
        match self {
            DbscanLabel::Core(c) | DbscanLabel::Border(c) => Some(c),
            DbscanLabel::Noise => None,
        }
    }
}

/// A point is core when at least `min_pts` points (itself included) lie
/// within distance `eps`. Clusters are numbered in order of their lowest
/// core point; a border point joins the first cluster that reaches it.
pub fn dbscan<T: Real>(points: &[Vec3<T>], eps: T, min_pts: usize) -> Vec<DbscanLabel> {
    let tree = KdTree::build(points);
    let neighbors: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        points.par_iter().map(|&p| tree.within_radius(p, eps)).collect()
    };
    let is_core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();

    let mut labels = vec![None::<DbscanLabel>; points.len()];
    let mut next_cluster = 0u32;
    let mut stack = Vec::new();
    for seed in 0..points.len() {
        if labels[seed].is_some() || !is_core[seed] {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[seed] = Some(DbscanLabel::Core(cluster));
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_some() {
                    continue;
                }
                if is_core[q] {
                    labels[q] = Some(DbscanLabel::Core(cluster));
                    stack.push(q);
                } else {
                    labels[q] = Some(DbscanLabel::Border(cluster));
                }
            }
        }
    }
    labels.into_iter().map(|l| l.unwrap_or(DbscanLabel::Noise)).collect()
}
