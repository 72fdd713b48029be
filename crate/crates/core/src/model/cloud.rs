use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> BoundingBox<T> {
    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn max_extent(&self) -> T {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::lit(0.5)
    }
}

/// Point positions with optional RGB colors. Point ids are the indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    positions: Vec<Vec3<T>>,
    colors: Option<Vec<[f32; 3]>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(positions: Vec<Vec3<T>>) -> Result<Self> {
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            positions,
            colors: None,
        })
    }

    pub fn with_colors(positions: Vec<Vec3<T>>, colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.len() != positions.len() {
            return Err(Error::SizeMismatch(positions.len(), colors.len()));
        }
        let mut cloud = Self::new(positions)?;
        cloud.colors = Some(colors.into_iter().map(|c| c.map(|v| v.clamp(0.0, 1.0))).collect());
        Ok(cloud)
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            colors: None,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn positions(&self) -> &[Vec3<T>] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, id: usize) -> Vec3<T> {
        self.positions[id]
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    /// Sub-cloud of the given ids, in the order given. Local id `k` of the
    /// result corresponds to `ids[k]` in `self`.
    pub fn subset(&self, ids: &[u32]) -> Self {
        let positions = ids.iter().map(|&i| self.positions[i as usize]).collect();
        let colors = self
            .colors
            .as_ref()
            .map(|c| ids.iter().map(|&i| c[i as usize]).collect());
        Self { positions, colors }
    }

    pub fn bounding_box(&self) -> Option<BoundingBox<T>> {
        let first = *self.positions.first()?;
        let (min, max) = self.positions.iter().fold((first, first), |(lo, hi), &p| {
            (lo.component_min(p), hi.component_max(p))
        });
        Some(BoundingBox { min, max })
    }

    pub fn centroid(&self) -> Option<Vec3<T>> {
        if self.is_empty() {
            return None;
        }
        let sum = self.positions.iter().fold(Vec3::zero(), |acc, &p| acc + p);
        Some(sum * (T::one() / T::lit(self.len() as f64)))
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            positions: self.positions.iter().map(|p| p.cast()).collect(),
            colors: self.colors.clone(),
        }
    }
}
