//! Chamfer, Hausdorff and point-to-mesh distances, plus report emission.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_normalization, normalize_unit_sphere, pairwise_mean, NeighborIndex, Point3, PointCloud};

/// Presentation scale factors for tables.
pub const CD_SCALE: f64 = 1e4;
pub const HD_SCALE: f64 = 1e2;
pub const P2M_SCALE: f64 = 1e4;

/// For each point of `a`, the distance to its nearest point in `b`.
pub fn nearest_distances(a: &PointCloud, b: &PointCloud) -> Result<Vec<f64>> {
    a.ensure_non_empty()?;
    b.ensure_non_empty()?;
    let index = NeighborIndex::new(b)?;
    Ok(a.points
        .iter()
        .map(|p| (b.points[index.nearest(p)] - p).norm_squared().sqrt())
        .collect())
}

/// `mean_a min_b d(a, b)`.
pub fn chamfer_one_sided(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(pairwise_mean(&nearest_distances(a, b)?))
}

/// `½ [mean_a min_b d + mean_b min_a d]` with true distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(0.5 * (chamfer_one_sided(a, b)? + chamfer_one_sided(b, a)?))
}

/// Symmetric Chamfer with squared distances.
pub fn chamfer_squared(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let sq = |x: &PointCloud, y: &PointCloud| -> Result<f64> {
        let d: Vec<f64> = nearest_distances(x, y)?.into_iter().map(|v| v * v).collect();
        Ok(pairwise_mean(&d))
    };
    Ok(0.5 * (sq(a, b)? + sq(b, a)?))
}

/// Directed Hausdorff `max_a min_b d(a, b)`.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(nearest_distances(a, b)?.into_iter().fold(0.0, f64::max))
}

pub fn hausdorff_symmetric(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(hausdorff(a, b)?.max(hausdorff(b, a)?))
}

/// Triangle surface with validated, non-degenerate faces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

fn triangle_is_degenerate(a: &Point3, b: &Point3, c: &Point3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let scale = e1.norm_squared().max(e2.norm_squared());
    e1.cross(&e2).norm_squared() <= 1e-24 * scale * scale || scale == 0.0
}

impl TriangleMesh {
    /// Checks indices and drops zero-area faces.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "face {i} references a vertex out of range"
                )));
            }
        }
        let faces = faces
            .into_iter()
            .filter(|f| !triangle_is_degenerate(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]))
            .collect();
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn map(&self, f: impl Fn(&Point3) -> Point3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Closest point on the closed triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Point3, a: &Point3, b: &Point3, c: &Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Euclidean distance from `p` to the closed triangle.
pub fn point_to_triangle(p: &Point3, tri: &[Point3; 3]) -> Result<f64> {
    let [a, b, c] = tri;
    if triangle_is_degenerate(a, b, c) {
        return Err(Error::DegenerateTriangle);
    }
    Ok(unchecked_point_to_triangle(p, tri))
}

fn unchecked_point_to_triangle(p: &Point3, tri: &[Point3; 3]) -> f64 {
    (closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]) - p).norm()
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3,
    hi: Point3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Point3::repeat(f64::INFINITY),
            hi: Point3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn distance(&self, p: &Point3) -> f64 {
        let d = (self.lo - p).sup(&(p - self.hi)).sup(&Point3::zeros());
        d.norm()
    }
}

enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over mesh faces for nearest-surface queries.
pub struct FaceIndex<'a> {
    mesh: &'a TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

impl<'a> FaceIndex<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut idx = Self {
            mesh,
            order: (0..mesh.faces.len()).collect(),
            nodes: Vec::new(),
        };
        idx.build(0, mesh.faces.len());
        Ok(idx)
    }

    fn face_bounds(&self, f: usize) -> Aabb {
        let mut b = Aabb::empty();
        for p in self.mesh.triangle(f) {
            b.grow(&p);
        }
        b
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut centroid_box = Aabb::empty();
        for &f in &self.order[start..end] {
            let fb = self.face_bounds(f);
            bounds.grow(&fb.lo);
            bounds.grow(&fb.hi);
            centroid_box.grow(&((fb.lo + fb.hi) * 0.5));
        }
        let id = self.nodes.len();
        let extent = centroid_box.hi - centroid_box.lo;
        let axis = extent.imax();
        if end - start <= 4 || extent[axis] <= 0.0 {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let mesh = self.mesh;
        let key = |f: usize| {
            let t = mesh.triangle(f);
            t[0][axis] + t[1][axis] + t[2][axis]
        };
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| key(a).total_cmp(&key(b)));
        self.nodes.push(BvhNode::Inner {
            bounds,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let BvhNode::Inner { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    /// Distance from `p` to the closest face; equal to the brute-force minimum.
    pub fn distance(&self, p: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if self.nodes[n].bounds().distance(p) > best {
                continue;
            }
            match self.nodes[n] {
                BvhNode::Leaf { start, end, .. } => {
                    for &f in &self.order[start..end] {
                        let d = unchecked_point_to_triangle(p, &self.mesh.triangle(f));
                        if d < best {
                            best = d;
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance(p);
                    let dr = self.nodes[right].bounds().distance(p);
                    // nearer child popped first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

/// Per-point distance to the mesh surface.
pub fn point_to_mesh_distances(cloud: &PointCloud, mesh: &TriangleMesh) -> Result<Vec<f64>> {
    cloud.ensure_non_empty()?;
    let index = FaceIndex::new(mesh)?;
    Ok(cloud.points.iter().map(|p| index.distance(p)).collect())
}

/// Mean distance from the points to the mesh surface.
pub fn point_to_mesh(cloud: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    Ok(pairwise_mean(&point_to_mesh_distances(cloud, mesh)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Normalize both clouds with the reference's fit instead of each with its own.
    pub shared_fit: bool,
    /// Chamfer on squared distances.
    pub squared_cd: bool,
    /// Skip unit-sphere normalization entirely.
    pub raw: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub cd: f64,
    pub hd: f64,
    pub p2m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Which variant produced each number.
    pub cd_variant: String,
    pub hd_variant: String,
    pub normalization: String,
    pub frames: Vec<FrameMetrics>,
    pub mean_cd: f64,
    pub mean_hd: f64,
    pub mean_p2m: Option<f64>,
}

/// Metrics of one frame after unit-sphere normalization.
pub fn evaluate_frame(
    frame: usize,
    denoised: &PointCloud,
    clean: &PointCloud,
    mesh: Option<&TriangleMesh>,
    options: MetricOptions,
) -> Result<FrameMetrics> {
    let (d, c, mesh) = if options.raw {
        (denoised.clone(), clean.clone(), mesh.cloned())
    } else {
        let (c, centroid, scale) = normalize_unit_sphere(clean)?;
        let d = if options.shared_fit {
            apply_normalization(denoised, &centroid, scale)
        } else {
            normalize_unit_sphere(denoised)?.0
        };
        let mesh = mesh.map(|m| m.map(|p| (p - centroid) / scale));
        (d, c, mesh)
    };
    let cd = if options.squared_cd {
        chamfer_squared(&d, &c)?
    } else {
        chamfer(&d, &c)?
    };
    let hd = hausdorff(&d, &c)?;
    let p2m = mesh.as_ref().map(|m| point_to_mesh(&d, m)).transpose()?;
    Ok(FrameMetrics { frame, cd, hd, p2m })
}

impl MetricReport {
    pub fn new(frames: Vec<FrameMetrics>, options: MetricOptions) -> Self {
        let cds: Vec<f64> = frames.iter().map(|f| f.cd).collect();
        let hds: Vec<f64> = frames.iter().map(|f| f.hd).collect();
        let p2ms: Option<Vec<f64>> = frames.iter().map(|f| f.p2m).collect();
        Self {
            cd_variant: if options.squared_cd {
                "symmetric-squared"
            } else {
                "symmetric"
            }
            .into(),
            hd_variant: "directed".into(),
            normalization: if options.raw {
                "none"
            } else if options.shared_fit {
                "shared-fit"
            } else {
                "own-fit"
            }
            .into(),
            mean_cd: pairwise_mean(&cds),
            mean_hd: pairwise_mean(&hds),
            mean_p2m: p2ms.filter(|v| !v.is_empty()).map(|v| pairwise_mean(&v)),
            frames,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Columns: frame, cd, cd_scaled, hd, hd_scaled, p2m, p2m_scaled.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,cd,cd_scaled,hd,hd_scaled,p2m,p2m_scaled\n");
        let p2m_cols = |v: Option<f64>| match v {
            Some(v) => format!("{v:.9e},{:.6}", v * P2M_SCALE),
            None => ",".to_string(),
        };
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{},{:.9e},{:.6},{:.9e},{:.6},{}",
                f.frame,
                f.cd,
                f.cd * CD_SCALE,
                f.hd,
                f.hd * HD_SCALE,
                p2m_cols(f.p2m)
            );
        }
        let _ = writeln!(
            out,
            "mean,{:.9e},{:.6},{:.9e},{:.6},{}",
            self.mean_cd,
            self.mean_cd * CD_SCALE,
            self.mean_hd,
            self.mean_hd * HD_SCALE,
            p2m_cols(self.mean_p2m)
        );
        out
    }
}
