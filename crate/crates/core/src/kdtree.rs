//! Static 3-d tree for nearest-neighbor, k-nearest and radius queries.
//!
//! Ties between equidistant points are broken by the lower point index so
//! every query result is deterministic.

use rayon::prelude::*;

use crate::linalg::Vec3;
use crate::scalar::Real;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: u8,
        value: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree<T> {
    /// Points in tree order.
    points: Vec<Vec3<T>>,
    /// `ids[k]` is the caller's index of `points[k]`.
    ids: Vec<u32>,
    nodes: Vec<Node<T>>,
}

/// Result of a nearest-neighbor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance_squared: T,
}

impl<T: Real> Neighbor<T> {
    pub fn distance(&self) -> T {
        self.distance_squared.sqrt()
    }

    #[inline]
    fn better_than(&self, other: &Self) -> bool {
        self.distance_squared < other.distance_squared
            || (self.distance_squared == other.distance_squared && self.index < other.index)
    }
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vec3<T>]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            ids: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let (lo, hi) = self.points[start..end]
            .iter()
            .fold((self.points[start], self.points[start]), |(lo, hi), &p| {
                (lo.component_min(p), hi.component_max(p))
            });
        let ext = hi - lo;
        let dim = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = start + (end - start) / 2;
        // Sort a permutation so points and ids move together.
        let mut order: Vec<usize> = (start..end).collect();
        let pts = &self.points;
        let ids = &self.ids;
        order.select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][dim].partial_cmp(&pts[b][dim]).unwrap().then(ids[a].cmp(&ids[b]))
        });
        let new_pts: Vec<_> = order.iter().map(|&i| self.points[i]).collect();
        let new_ids: Vec<_> = order.iter().map(|&i| self.ids[i]).collect();
        self.points[start..end].copy_from_slice(&new_pts);
        self.ids[start..end].copy_from_slice(&new_ids);
        let value = self.points[mid][dim];

        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            dim: dim as u8,
            value,
            left,
            right,
        };
        slot
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest point to `query`.
    pub fn nearest(&self, query: Vec3<T>) -> Option<Neighbor<T>> {
        if self.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            distance_squared: T::infinity(),
        };
        self.nearest_in(0, query, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: Vec3<T>, best: &mut Neighbor<T>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let cand = Neighbor {
                        index: self.ids[k] as usize,
                        distance_squared: self.points[k].distance_squared(q),
                    };
                    if cand.better_than(best) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.distance_squared {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points, nearest first.
    pub fn k_nearest(&self, query: Vec3<T>, k: usize) -> Vec<Neighbor<T>> {
        let mut heap: Vec<Neighbor<T>> = Vec::with_capacity(k + 1);
        if k > 0 && !self.is_empty() {
            self.k_nearest_in(0, query, k, &mut heap);
        }
        heap
    }

    fn k_nearest_in(&self, node: usize, q: Vec3<T>, k: usize, found: &mut Vec<Neighbor<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let cand = Neighbor {
                        index: self.ids[i] as usize,
                        distance_squared: self.points[i].distance_squared(q),
                    };
                    if found.len() < k || cand.better_than(found.last().unwrap()) {
                        let pos = found.partition_point(|n| n.better_than(&cand));
                        found.insert(pos, cand);
                        found.truncate(k);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.k_nearest_in(near, q, k, found);
                if found.len() < k || diff * diff <= found.last().unwrap().distance_squared {
                    self.k_nearest_in(far, q, k, found);
                }
            }
        }
    }

    /// Indices of all points with distance ≤ `radius`, ascending.
    pub fn within_radius(&self, query: Vec3<T>, radius: T) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_in(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_in(&self, node: usize, q: Vec3<T>, r2: T, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    if self.points[i].distance_squared(q) <= r2 {
                        out.push(self.ids[i] as usize);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.radius_in(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_in(far, q, r2, out);
                }
            }
        }
    }
}

/// Median distance from each point to its nearest other point.
///
/// Returns `None` for clouds with fewer than two points.
pub fn median_nn_spacing<T: Real>(points: &[Vec3<T>], tree: &KdTree<T>) -> Option<T> {
    if points.len() < 2 {
        return None;
    }
    let mut d: Vec<T> = points.par_iter().map(|&p| tree.k_nearest(p, 2)[1].distance()).collect();
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    Some(d[mid])
}
