//! Temporal fusion: adjacent-frame fields are pulled back into the target
//! frame through the patch correspondences and averaged.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GradientField;
use crate::geometry::{Point3, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Adjacent fields pulled back through the recovered transforms.
    #[default]
    Gradient,
    /// Adjacent fields averaged in place, without any transform.
    Mean,
    /// Target frame only.
    None,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "mean" => Ok(Self::Mean),
            "none" => Ok(Self::None),
            other => Err(Error::config("fusion", format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gradient => "gradient",
            Self::Mean => "mean",
            Self::None => "none",
        })
    }
}

/// `x ↦ Rᵀ · G(𝒯(x))`.
#[derive(Clone)]
pub struct TransformedField<F> {
    pub field: F,
    pub transform: RigidTransform,
}

impl<F: GradientField> GradientField for TransformedField<F> {
    fn eval(&self, x: &Point3) -> Vec3 {
        self.transform.rotation.transpose() * self.field.eval(&self.transform.apply(x))
    }
}

pub fn inverse_transform_field<F: GradientField>(field: F, transform: RigidTransform) -> TransformedField<F> {
    TransformedField { field, transform }
}

/// Weighted average of the target field and its pulled-back adjacents.
pub struct FusedField<'a> {
    pub target: &'a dyn GradientField,
    pub adjacents: Vec<(&'a dyn GradientField, RigidTransform, f64)>,
    pub target_weight: f64,
    pub mode: FusionMode,
}

impl GradientField for FusedField<'_> {
    fn eval(&self, x: &Point3) -> Vec3 {
        let mut g = self.target.eval(x) * self.target_weight;
        for (field, transform, weight) in &self.adjacents {
            let pulled = transform.rotation.transpose() * field.eval(&transform.apply(x));
            g += pulled * *weight;
        }
        g
    }

    fn ascend(&self, x: &Point3, step: f64) -> Point3 {
        if self.adjacents.is_empty() {
            self.target.ascend(x, step * self.target_weight)
        } else {
            x + self.eval(x) * step
        }
    }
}

impl FusedField<'_> {
    pub fn weights(&self) -> Vec<f64> {
        std::iter::once(self.target_weight)
            .chain(self.adjacents.iter().map(|a| a.2))
            .collect()
    }
}

pub fn fuse_fields<'a>(
    target: &'a dyn GradientField,
    adjacents: &[(&'a dyn GradientField, RigidTransform)],
    mode: FusionMode,
) -> Result<FusedField<'a>> {
    if adjacents.len() > 2 {
        return Err(Error::InvalidArgument(format!(
            "at most two adjacent fields, got {}",
            adjacents.len()
        )));
    }
    let kept: Vec<(&dyn GradientField, RigidTransform)> = match mode {
        FusionMode::None => Vec::new(),
        FusionMode::Mean => adjacents
            .iter()
            .map(|(f, _)| (*f, RigidTransform::identity()))
            .collect(),
        FusionMode::Gradient => adjacents.to_vec(),
    };
    let w = 1.0 / (kept.len() + 1) as f64;
    Ok(FusedField {
        target,
        adjacents: kept.into_iter().map(|(f, t)| (f, t, w)).collect(),
        target_weight: w,
        mode,
    })
}
