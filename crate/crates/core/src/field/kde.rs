use super::GradientField;
use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point3, PointCloud, Vec3};

/// Output units of a [`KdeField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdeUnits {
    /// `∇ log q̂(x)` exactly.
    Score,
    /// `h² ∇ log q̂(x)`, the mean-shift vector: kernel-weighted mean minus `x`.
    /// Same units as the oracle displacement field.
    Displacement,
}

/// Gradient of the log of an equal-weight Gaussian kernel density estimate
/// centered on the points of a (noisy) frame.
#[derive(Debug, Clone)]
pub struct KdeField {
    index: NeighborIndex,
    bandwidth: f64,
    truncation: Option<f64>,
    units: KdeUnits,
}

impl KdeField {
    pub fn new(cloud: &PointCloud, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::config("bandwidth", format!("must be > 0, got {bandwidth}")));
        }
        Ok(Self {
            index: NeighborIndex::new(cloud)?,
            bandwidth,
            truncation: None,
            units: KdeUnits::Score,
        })
    }

    /// Bandwidth equal to the mean nearest-neighbor spacing times `factor`.
    pub fn with_spacing_bandwidth(cloud: &PointCloud, factor: f64) -> Result<Self> {
        let spacing = cloud.mean_spacing()?;
        Self::new(cloud, spacing * factor)
    }

    /// Ignore kernels farther than `radius_factor * h`. When no kernel falls
    /// inside the radius the single nearest kernel is used.
    pub fn truncated(mut self, radius_factor: f64) -> Self {
        self.truncation = Some(radius_factor * self.bandwidth);
        self
    }

    pub fn with_units(mut self, units: KdeUnits) -> Self {
        self.units = units;
        self
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn units(&self) -> KdeUnits {
        self.units
    }

    pub fn centers(&self) -> &[Point3] {
        self.index.points()
    }

    /// `Σ wᵢ (xᵢ - x)` with softmax weights over `-|x - xᵢ|² / 2h²`.
    pub fn mean_shift(&self, x: &Point3) -> Vec3 {
        let points = self.index.points();
        match self.truncation {
            None => weighted_offset(x, points.iter(), self.bandwidth),
            Some(radius) => {
                let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
                let mut max_logit = f64::NEG_INFINITY;
                let mut total = 0.0;
                let mut acc = Vec3::zeros();
                self.index.visit_within(x, radius, |i, d2| {
                    let logit = -d2 * inv;
                    if logit > max_logit {
                        let rescale = (max_logit - logit).exp();
                        total *= rescale;
                        acc *= rescale;
                        max_logit = logit;
                    }
                    let w = (logit - max_logit).exp();
                    total += w;
                    acc += (points[i] - x) * w;
                });
                if total > 0.0 {
                    acc / total
                } else {
                    points[self.index.nearest(x)] - x
                }
            }
        }
    }

    pub fn score(&self, x: &Point3) -> Vec3 {
        self.mean_shift(x) / (self.bandwidth * self.bandwidth)
    }

    /// `log q̂(x)` including the Gaussian normalization, untruncated.
    pub fn log_density(&self, x: &Point3) -> f64 {
        let h2 = self.bandwidth * self.bandwidth;
        let points = self.index.points();
        let logits: Vec<f64> = points.iter().map(|p| -(p - x).norm_squared() / (2.0 * h2)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln() - (points.len() as f64).ln() - 1.5 * (2.0 * std::f64::consts::PI * h2).ln()
    }
}

fn weighted_offset<'a>(x: &Point3, centers: impl Iterator<Item = &'a Point3> + Clone, h: f64) -> Vec3 {
    let inv = 1.0 / (2.0 * h * h);
    let max_logit = centers
        .clone()
        .map(|p| -(p - x).norm_squared() * inv)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut acc = Vec3::zeros();
    for p in centers {
        let d = p - x;
        let w = (-d.norm_squared() * inv - max_logit).exp();
        total += w;
        acc += d * w;
    }
    acc / total
}

impl GradientField for KdeField {
    fn eval(&self, x: &Point3) -> Vec3 {
        match self.units {
            KdeUnits::Score => self.score(x),
            KdeUnits::Displacement => self.mean_shift(x),
        }
    }
}
