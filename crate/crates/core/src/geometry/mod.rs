//! Core 3D types: clouds, sequences, patches, rigid transforms, spatial
//! indexing and farthest point sampling.

mod kdtree;
mod sampling;
mod transform;

pub use kdtree::NeighborIndex;
pub use sampling::{farthest_point_sampling, farthest_point_sampling_points};
pub use transform::{rodrigues, RigidTransform, ORTHONORMAL_TOLERANCE};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// An ordered point set. Indices are point identities and never reordered.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub source: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, source: None })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ensure_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyInput)
        } else {
            Ok(())
        }
    }

    pub fn centroid(&self) -> Result<Point3> {
        self.ensure_non_empty()?;
        Ok(mean_point(&self.points))
    }

    /// Largest distance from the centroid.
    pub fn bounding_radius(&self) -> Result<f64> {
        let c = self.centroid()?;
        Ok(self.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max))
    }

    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            source: self.source.clone(),
        }
    }

    /// Mean distance from each point to its nearest other point.
    pub fn mean_spacing(&self) -> Result<f64> {
        self.ensure_non_empty()?;
        if self.len() < 2 {
            return Err(Error::DegenerateExtent);
        }
        let index = NeighborIndex::new(self)?;
        let total: f64 = self
            .points
            .iter()
            .map(|p| {
                let nn = index.k_nearest(p, 2).expect("cloud has at least two points");
                (self.points[nn[1]] - p).norm()
            })
            .sum();
        Ok(total / self.len() as f64)
    }
}

/// Timestamped frames; frame `t` lives at position `t` (zero-based).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameSequence {
    pub frames: Vec<PointCloud>,
}

impl FrameSequence {
    pub fn new(frames: Vec<PointCloud>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A center point plus its nearest neighbors, moved as one rigid body.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Indices into the source frame.
    pub indices: Vec<usize>,
    /// Current coordinates (one per index).
    pub points: Vec<Point3>,
    /// Arithmetic mean of `points`.
    pub center: Point3,
    /// Source frame index.
    pub frame: usize,
}

impl Patch {
    pub fn new(indices: Vec<usize>, points: Vec<Point3>, frame: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if indices.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "patch has {} indices but {} points",
                indices.len(),
                points.len()
            )));
        }
        let center = mean_point(&points);
        Ok(Self {
            indices,
            points,
            center,
            frame,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps every point through `transform` and recomputes the center.
    pub fn apply_transform(&self, transform: &RigidTransform) -> Patch {
        let points: Vec<Point3> = self.points.iter().map(|p| transform.apply(p)).collect();
        let center = mean_point(&points);
        Patch {
            indices: self.indices.clone(),
            points,
            center,
            frame: self.frame,
        }
    }
}

pub fn mean_point(points: &[Point3]) -> Point3 {
    let sum = points.iter().fold(Point3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Centers the cloud at the origin and scales it so the farthest point has
/// norm 1. Returns the fitted centroid and scale so the mapping can be undone
/// with `p * scale + centroid`.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<(PointCloud, Point3, f64)> {
    let centroid = cloud.centroid()?;
    let scale = cloud.points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let magnitude = cloud
        .points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |m, c| m.max(c.abs()));
    if scale <= 1e-12 * magnitude {
        return Err(Error::DegenerateExtent);
    }
    Ok((cloud.map(|p| (p - centroid) / scale), centroid, scale))
}

/// Applies a previously fitted normalization to another cloud.
pub fn apply_normalization(cloud: &PointCloud, centroid: &Point3, scale: f64) -> PointCloud {
    cloud.map(|p| (p - centroid) / scale)
}

/// The center point plus its `m - 1` nearest neighbors. The center always
/// comes first, even when duplicates of it exist at smaller indices.
pub fn extract_patch(
    frame: &PointCloud,
    index: &NeighborIndex,
    center: usize,
    m: usize,
    frame_index: usize,
) -> Result<Patch> {
    let n = frame.len();
    if m == 0 || m > n {
        return Err(Error::InvalidSampleCount { count: m, n });
    }
    if center >= n {
        return Err(Error::InvalidArgument(format!(
            "center index {center} out of range for {n} points"
        )));
    }
    let mut indices = index.k_nearest(&frame.points[center], m)?;
    if let Some(pos) = indices.iter().position(|&i| i == center) {
        indices.remove(pos);
    } else {
        indices.pop();
    }
    indices.insert(0, center);
    let points = indices.iter().map(|&i| frame.points[i]).collect();
    Patch::new(indices, points, frame_index)
}

/// Deterministic sum (pairwise reduction) so means do not depend on how the
/// values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}
