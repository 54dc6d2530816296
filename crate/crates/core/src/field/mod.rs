//! Gradient-field providers approximating `∇ log q(x)` of a noisy frame.
//!
//! Three backends share the [`GradientField`] trait:
//! - [`OracleField`]: displacement to the nearest clean point (training target).
//! - [`KdeField`]: analytic score of a Gaussian kernel density estimate.
//! - [`LearnedField`]: per-anchor perceptron heads averaged over the k nearest anchors.

mod kde;
mod learned;
mod network;
mod train;

use std::sync::Arc;

pub use kde::{KdeField, KdeUnits};
pub use learned::{AnchorRef, LearnedField, WeightFile, WEIGHT_MAGIC};
pub use network::{
    extract_features, gradient_head, local_geometry, Dense, FieldNetwork, LocalGeometry, PointFeature, DESCRIPTOR_DIM,
    FEATURE_DIM, FEATURE_HIDDEN, HEAD_HIDDEN,
};
pub use train::{
    field_loss, sample_neighborhood, train_field, NetworkGradient, TrainingConfig, TrainingReport, TrainingSet,
};

use crate::error::Result;
use crate::geometry::{NeighborIndex, Point3, PointCloud, Vec3};

/// An evaluable vector field. Implementations are immutable and shareable.
pub trait GradientField: Send + Sync {
    fn eval(&self, x: &Point3) -> Vec3;

    /// `x + step · eval(x)`. Implementations may compute it more accurately
    /// than the literal sum.
    fn ascend(&self, x: &Point3, step: f64) -> Point3 {
        x + self.eval(x) * step
    }
}

impl<T: GradientField + ?Sized> GradientField for Arc<T> {
    fn eval(&self, x: &Point3) -> Vec3 {
        (**self).eval(x)
    }

    fn ascend(&self, x: &Point3, step: f64) -> Point3 {
        (**self).ascend(x, step)
    }
}

impl<T: GradientField + ?Sized> GradientField for &T {
    fn eval(&self, x: &Point3) -> Vec3 {
        (**self).eval(x)
    }

    fn ascend(&self, x: &Point3, step: f64) -> Point3 {
        (**self).ascend(x, step)
    }
}

pub type SharedField = Arc<dyn GradientField>;

/// `g(x) = NN(x, Y) - x` over a clean reference cloud `Y`.
#[derive(Debug, Clone)]
pub struct OracleField {
    index: NeighborIndex,
}

impl OracleField {
    pub fn new(clean: &PointCloud) -> Result<Self> {
        Ok(Self {
            index: NeighborIndex::new(clean)?,
        })
    }

    pub fn nearest_clean(&self, x: &Point3) -> Point3 {
        self.index.points()[self.index.nearest(x)]
    }
}

impl GradientField for OracleField {
    fn eval(&self, x: &Point3) -> Vec3 {
        self.nearest_clean(x) - x
    }

    /// A unit step returns the clean point itself, bit for bit.
    fn ascend(&self, x: &Point3, step: f64) -> Point3 {
        let y = self.nearest_clean(x);
        if step == 1.0 {
            y
        } else {
            x + (y - x) * step
        }
    }
}

/// The same vector everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub Vec3);

impl GradientField for ConstantField {
    fn eval(&self, _x: &Point3) -> Vec3 {
        self.0
    }
}

/// A field scaled by a constant factor.
pub struct ScaledField<F> {
    pub inner: F,
    pub scale: f64,
}

impl<F: GradientField> GradientField for ScaledField<F> {
    fn eval(&self, x: &Point3) -> Vec3 {
        self.inner.eval(x) * self.scale
    }
}

/// Wraps a closure; handy for analytic test fields.
pub struct FnField<F>(pub F);

impl<F: Fn(&Point3) -> Vec3 + Send + Sync> GradientField for FnField<F> {
    fn eval(&self, x: &Point3) -> Vec3 {
        (self.0)(x)
    }
}
