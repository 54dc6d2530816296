use nalgebra::Rotation3;

use super::{Mat3, Point3, Vec3};
use crate::error::{Error, Result};

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rigid motion `x -> R (x - pivot) + pivot + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub pivot: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3, pivot: Point3) -> Result<Self> {
        let deviation = orthonormal_deviation(&rotation);
        if !(deviation <= ORTHONORMAL_TOLERANCE) {
            return Err(Error::NonOrthonormal { deviation });
        }
        if !translation.iter().chain(pivot.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rigid transform translation or pivot".into()));
        }
        Ok(Self {
            rotation,
            translation,
            pivot,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            pivot: Point3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    /// Rotation by the axis-angle vector `theta` about `pivot`.
    pub fn rotation_about(theta: &Vec3, pivot: Point3) -> Self {
        Self {
            rotation: rodrigues(theta),
            translation: Vec3::zeros(),
            pivot,
        }
    }

    pub fn apply(&self, x: &Point3) -> Point3 {
        self.rotation * (x - self.pivot) + self.pivot + self.translation
    }

    /// Rotates a free vector (no translation).
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Equivalent `(R, t)` with `x -> R x + t`.
    pub fn canonical(&self) -> (Mat3, Vec3) {
        (
            self.rotation,
            self.pivot - self.rotation * self.pivot + self.translation,
        )
    }

    fn from_canonical(rotation: Mat3, offset: Vec3, pivot: Point3) -> Self {
        Self {
            rotation,
            translation: offset - pivot + rotation * pivot,
            pivot,
        }
    }

    /// `outer ∘ inner`: applying the result equals applying `inner` then
    /// `outer`. The composed transform keeps `inner`'s pivot.
    pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
        let (ra, ta) = outer.canonical();
        let (rb, tb) = inner.canonical();
        Self::from_canonical(ra * rb, ra * tb + ta, inner.pivot)
    }

    pub fn then(&self, outer: &RigidTransform) -> RigidTransform {
        Self::compose(outer, self)
    }

    pub fn inverse(&self) -> RigidTransform {
        let (r, t) = self.canonical();
        let rt = r.transpose();
        Self::from_canonical(rt, -(rt * t), self.pivot)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn orthonormal_deviation(&self) -> f64 {
        orthonormal_deviation(&self.rotation)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        let (r, t) = self.canonical();
        (r - Mat3::identity()).amax() <= tol && t.amax() <= tol
    }
}

/// Max of `|RᵀR - I|` entries and `|det R - 1|`.
pub fn orthonormal_deviation(r: &Mat3) -> f64 {
    let gram = (r.transpose() * r - Mat3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    if gram.is_nan() || det.is_nan() {
        f64::NAN
    } else {
        gram.max(det)
    }
}

pub fn rotation_angle(r: &Mat3) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    cos.acos()
}

/// Axis-angle vector to rotation matrix.
pub fn rodrigues(theta: &Vec3) -> Mat3 {
    Rotation3::new(*theta).into_inner()
}
