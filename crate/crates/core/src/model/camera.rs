use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

/// Pinhole camera with world-to-camera pose: `X_cam = R·X + t`.
///
/// Camera frame is x right, y down, z forward. Pixel centers sit at integer
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<T> {
    pub view_id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> CameraView<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        view_id: u32,
        width: usize,
        height: usize,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        rotation: Mat3<T>,
        translation: Vec3<T>,
    ) -> Result<Self> {
        let view = Self {
            view_id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        view.validate(T::rotation_tolerance())?;
        Ok(view)
    }

    /// Checks intrinsics and the rotation at tolerance `tol`.
    pub fn validate(&self, tol: T) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        let (w, h) = (T::lit(self.width as f64), T::lit(self.height as f64));
        if !(self.cx > T::zero() && self.cx < w && self.cy > T::zero() && self.cy < h) {
            return Err(Error::InvalidCamera("principal point outside image".into()));
        }
        if !self.translation.is_finite() {
            return Err(Error::InvalidCamera("non-finite translation".into()));
        }
        if !self.rotation.is_rotation(tol) {
            return Err(Error::NonOrthonormalRotation);
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image y
    /// points away from it). `up` must not be parallel to the view direction.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        view_id: u32,
        width: usize,
        height: usize,
        focal: T,
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
    ) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(up);
        if !(right.norm() > T::epsilon()) {
            return Err(Error::InvalidCamera("up vector parallel to view direction".into()));
        }
        let right = right.normalized();
        let down = forward.cross(right);
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -(rotation * eye);
        let half = T::lit(0.5);
        Self::new(
            view_id,
            width,
            height,
            focal,
            focal,
            T::lit(width as f64) * half,
            T::lit(height as f64) * half,
            rotation,
            translation,
        )
    }

    #[inline]
    pub fn to_camera(&self, world: Vec3<T>) -> Vec3<T> {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn to_world(&self, cam: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        self.to_world(Vec3::zero())
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn cast<U: Real>(&self) -> CameraView<U> {
        CameraView {
            view_id: self.view_id,
            width: self.width,
            height: self.height,
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}
