//! Synthetic corruption and synthetic dynamic sequences.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rodrigues, FrameSequence, Point3, PointCloud, RigidTransform, Vec3};
use crate::metrics::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    Gaussian,
}

/// Noise level `σ` as a fraction of the bounding-sphere radius. When
/// `sigma_max` is set, sequence corruption draws one `σ` per frame uniformly
/// from `[sigma, sigma_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub sigma: f64,
    pub sigma_max: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            model: NoiseModel::Gaussian,
            sigma: 0.01,
            sigma_max: None,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        if let Some(max) = self.sigma_max {
            if !(max >= self.sigma) || !max.is_finite() {
                return Err(Error::config("sigma_max", format!("must be >= sigma, got {max}")));
            }
        }
        Ok(())
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Adds i.i.d. `N(0, (σR)²)` to every coordinate, `R` the bounding radius.
pub fn add_gaussian(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    add_gaussian_with(cloud, spec.sigma, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

fn add_gaussian_with(cloud: &PointCloud, sigma: f64, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    let std = sigma * cloud.bounding_radius()?;
    let normal = Normal::new(0.0, std).map_err(|e| Error::config("sigma", e.to_string()))?;
    let points = cloud
        .points
        .iter()
        .map(|p| p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect();
    PointCloud::new(points)
}

/// Corrupts every frame with its own stream; returns the `σ` used per frame.
pub fn corrupt_sequence(sequence: &FrameSequence, spec: &NoiseSpec) -> Result<(FrameSequence, Vec<f64>)> {
    spec.validate()?;
    let mut frames = Vec::with_capacity(sequence.len());
    let mut sigmas = Vec::with_capacity(sequence.len());
    for (t, frame) in sequence.frames.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, t as u64));
        let sigma = match spec.sigma_max {
            Some(max) if max > spec.sigma => rng.gen_range(spec.sigma..=max),
            _ => spec.sigma,
        };
        frames.push(add_gaussian_with(frame, sigma, &mut rng)?);
        sigmas.push(sigma);
    }
    Ok((FrameSequence::new(frames)?, sigmas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// Square `[-1, 1]²` in the `z = 0` plane.
    Plane,
    /// Unit sphere.
    Sphere,
    /// Major radius 1, minor radius 0.35, axis `z`.
    Torus,
    /// Two separated axis-aligned boxes.
    TwoBox,
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::Plane),
            "sphere" => Ok(Self::Sphere),
            "torus" => Ok(Self::Torus),
            "two-box" => Ok(Self::TwoBox),
            other => Err(Error::config("shape", format!("unknown shape '{other}'"))),
        }
    }
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;
const BOXES: [([f64; 3], [f64; 3]); 2] = [
    ([-1.2, -0.5, -0.5], [-0.2, 0.5, 0.5]),
    ([0.3, -0.4, -0.7], [1.1, 0.4, 0.7]),
];

/// Per-frame motion: frame `t` is the base shape rotated by `t·ω` about the
/// origin, then shifted by `t·v + bounce(t)·ẑ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Motion {
    /// Axis-angle rotation added per frame.
    pub rotation: [f64; 3],
    /// Translation added per frame.
    pub translation: [f64; 3],
    /// Height of the vertical bounce `|sin(π t / period)|`.
    pub bounce_height: f64,
    pub bounce_period: f64,
}

impl Default for Motion {
    fn default() -> Self {
        Self {
            rotation: [0.0; 3],
            translation: [0.0; 3],
            bounce_height: 0.0,
            bounce_period: 4.0,
        }
    }
}

impl Motion {
    pub fn bouncing() -> Self {
        Self {
            rotation: [0.0, 0.0, 0.06],
            translation: [0.05, 0.0, 0.0],
            bounce_height: 0.3,
            bounce_period: 4.0,
        }
    }

    /// Absolute transform of frame `t` relative to the base shape.
    pub fn frame_transform(&self, t: usize) -> RigidTransform {
        let tf = t as f64;
        let rotation = rodrigues(&(Vec3::from(self.rotation) * tf));
        let bounce = if self.bounce_height != 0.0 {
            self.bounce_height * (std::f64::consts::PI * tf / self.bounce_period).sin().abs()
        } else {
            0.0
        };
        RigidTransform {
            rotation,
            translation: Vec3::from(self.translation) * tf + Vec3::z() * bounce,
            pivot: Point3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub points: usize,
    pub frames: usize,
    #[serde(default)]
    pub motion: Motion,
    /// Draw a fresh surface sampling for every frame.
    #[serde(default)]
    pub resample: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// The bouncing-sphere benchmark scene.
    pub fn bouncing_sphere(points: usize, frames: usize, seed: u64) -> Self {
        Self {
            shape: Shape::Sphere,
            points,
            frames,
            motion: Motion::bouncing(),
            resample: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("frames", "must be >= 1"));
        }
        if self.points == 0 {
            return Err(Error::config("points", "must be >= 1"));
        }
        let m = &self.motion;
        let finite = m.rotation.iter().chain(&m.translation).all(|v| v.is_finite());
        if !finite || !m.bounce_height.is_finite() {
            return Err(Error::config("motion", "must be finite"));
        }
        if m.bounce_height != 0.0 && !(m.bounce_period > 0.0) {
            return Err(Error::config("motion.bounce_period", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub clean: FrameSequence,
    /// Absolute transform of each frame relative to the base shape.
    pub transforms: Vec<RigidTransform>,
    pub meshes: Option<Vec<TriangleMesh>>,
}

impl GeneratedSequence {
    /// Motion mapping frame `t` onto frame `t + 1`.
    pub fn step_transform(&self, t: usize) -> RigidTransform {
        RigidTransform::compose(&self.transforms[t + 1], &self.transforms[t].inverse())
    }
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<GeneratedSequence> {
    spec.validate()?;
    let mut base = sample_shape(spec.shape, spec.points, &mut ChaCha8Rng::seed_from_u64(spec.seed))?;
    let base_mesh = shape_mesh(spec.shape)?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut transforms = Vec::with_capacity(spec.frames);
    let mut meshes = base_mesh.as_ref().map(|_| Vec::with_capacity(spec.frames));
    for t in 0..spec.frames {
        if spec.resample && t > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, t as u64));
            base = sample_shape(spec.shape, spec.points, &mut rng)?;
        }
        let transform = spec.motion.frame_transform(t);
        frames.push(base.map(|p| transform.apply(p)));
        if let (Some(list), Some(mesh)) = (meshes.as_mut(), base_mesh.as_ref()) {
            list.push(mesh.map(|p| transform.apply(p)));
        }
        transforms.push(transform);
    }
    Ok(GeneratedSequence {
        clean: FrameSequence::new(frames)?,
        transforms,
        meshes,
    })
}

/// Area-uniform random samples of a shape's surface.
pub fn sample_shape(shape: Shape, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    let points = (0..n)
        .map(|_| match shape {
            Shape::Plane => Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0),
            Shape::Sphere => loop {
                let v = Vec3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                let norm = v.norm();
                if norm > 1e-12 {
                    break v / norm;
                }
            },
            Shape::Torus => sample_torus(rng),
            Shape::TwoBox => sample_boxes(rng),
        })
        .collect();
    PointCloud::new(points)
}

fn sample_torus(rng: &mut impl Rng) -> Point3 {
    use std::f64::consts::TAU;
    loop {
        let u = rng.gen_range(0.0..TAU);
        let v = rng.gen_range(0.0..TAU);
        let weight = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.gen::<f64>() <= weight {
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            return Point3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
        }
    }
}

fn box_faces() -> Vec<(Point3, Vec3, Vec3)> {
    let mut faces = Vec::new();
    for (lo, hi) in BOXES {
        let (lo, hi) = (Point3::from(lo), Point3::from(hi));
        let size = hi - lo;
        for axis in 0..3 {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut ea = Vec3::zeros();
            ea[a] = size[a];
            let mut eb = Vec3::zeros();
            eb[b] = size[b];
            for side in [0.0, 1.0] {
                let mut origin = lo;
                origin[axis] += side * size[axis];
                faces.push((origin, ea, eb));
            }
        }
    }
    faces
}

fn sample_boxes(rng: &mut impl Rng) -> Point3 {
    let faces = box_faces();
    let areas: Vec<f64> = faces.iter().map(|(_, a, b)| a.norm() * b.norm()).collect();
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut chosen = faces.len() - 1;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            chosen = i;
            break;
        }
        pick -= a;
    }
    let (o, a, b) = faces[chosen];
    o + a * rng.gen::<f64>() + b * rng.gen::<f64>()
}

/// Reference mesh of a shape, where one is defined.
pub fn shape_mesh(shape: Shape) -> Result<Option<TriangleMesh>> {
    match shape {
        Shape::Plane => TriangleMesh::new(
            vec![
                Point3::new(-1.0, -1.0, 0.0),
                Point3::new(1.0, -1.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(-1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .map(Some),
        Shape::Sphere => icosphere(4).map(Some),
        Shape::Torus => torus_mesh(96, 48).map(Some),
        Shape::TwoBox => Ok(None),
    }
}

fn icosphere(levels: usize) -> Result<TriangleMesh> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Point3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) / 2.0).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(vertices, faces)
}

fn torus_mesh(major: usize, minor: usize) -> Result<TriangleMesh> {
    use std::f64::consts::TAU;
    let mut vertices = Vec::with_capacity(major * minor);
    for i in 0..major {
        let u = TAU * i as f64 / major as f64;
        for j in 0..minor {
            let v = TAU * j as f64 / minor as f64;
            let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
            vertices.push(Point3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut faces = Vec::with_capacity(2 * major * minor);
    for i in 0..major {
        for j in 0..minor {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces)
}
