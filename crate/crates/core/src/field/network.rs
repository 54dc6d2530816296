use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point3, PointCloud, Vec3};

/// Length of the hand-built local-geometry descriptor.
pub const DESCRIPTOR_DIM: usize = 12;
pub const FEATURE_HIDDEN: usize = 64;
/// Width of a learned per-point feature `hᵢ`.
pub const FEATURE_DIM: usize = 32;
pub const HEAD_HIDDEN: usize = 64;
const HEAD_INPUT: usize = 3 + FEATURE_DIM;

/// Fully connected layer, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform in `[-a, a]` with `a = 1/sqrt(inputs)`; zero bias.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-a..=a)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.inputs);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and writes the input
    /// gradient into `d_input` (overwritten).
    pub fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut Dense, d_input: &mut [f64]) {
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let base = o * self.inputs;
            for i in 0..self.inputs {
                grad.weights[base + i] += g * input[i];
                d_input[i] += g * self.weights[base + i];
            }
        }
    }

    fn check_shape(&self, name: &str) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::WeightFile(format!(
                "layer {name} has inconsistent shape {}x{}",
                self.outputs, self.inputs
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::WeightFile(format!("layer {name} has non-finite weights")));
        }
        Ok(())
    }
}

/// Learned per-point feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFeature(pub [f64; FEATURE_DIM]);

/// Translation-invariant statistics of a point's neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalGeometry {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    /// Smallest-eigenvalue eigenvector, oriented toward +z.
    pub normal: Vec3,
    /// Mean distance to the neighbors.
    pub density: f64,
    /// Point minus neighborhood centroid.
    pub offset: Vec3,
    /// Mean cubed height of the neighbors along the normal.
    pub skew: f64,
}

impl LocalGeometry {
    pub fn descriptor(&self) -> [f64; DESCRIPTOR_DIM] {
        let [l1, l2, l3] = self.eigenvalues;
        let height = self.offset.dot(&self.normal);
        [
            l1.max(0.0).sqrt(),
            l2.max(0.0).sqrt(),
            l3.max(0.0).sqrt(),
            self.normal.x,
            self.normal.y,
            self.normal.z,
            self.density,
            self.offset.x,
            self.offset.y,
            self.offset.z,
            height,
            self.skew.cbrt(),
        ]
    }
}

fn orient(n: Vec3) -> Vec3 {
    let flip = if n.z != 0.0 {
        n.z < 0.0
    } else if n.y != 0.0 {
        n.y < 0.0
    } else {
        n.x < 0.0
    };
    if flip {
        -n
    } else {
        n
    }
}

/// Local geometry of `center` computed from `neighbors` (which may include it).
pub fn local_geometry(center: &Point3, neighbors: &[Point3]) -> LocalGeometry {
    let count = neighbors.len().max(1) as f64;
    let centroid = neighbors.iter().fold(Vec3::zeros(), |a, p| a + p) / count;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= count;
    let density = neighbors.iter().map(|p| (p - center).norm()).sum::<f64>() / count;
    let offset = center - centroid;

    if cov.amax() == 0.0 {
        return LocalGeometry {
            eigenvalues: [0.0; 3],
            normal: Vec3::z(),
            density,
            offset,
            skew: 0.0,
        };
    }

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    let normal = orient(eig.eigenvectors.column(order[2]).normalize());
    let skew = neighbors
        .iter()
        .map(|p| (p - centroid).dot(&normal).powi(3))
        .sum::<f64>()
        / count;
    LocalGeometry {
        eigenvalues,
        normal,
        density,
        offset,
        skew,
    }
}

/// Feature unit plus gradient head.
///
/// Feature unit: descriptor (12) → 64 tanh → 32 tanh.
/// Gradient head: `[x - xᵢ, hᵢ]` (35) → 64 tanh → 3 linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldNetwork {
    pub feature_in: Dense,
    pub feature_out: Dense,
    pub head_in: Dense,
    pub head_out: Dense,
    /// Neighborhood size used for descriptors.
    pub k_feat: usize,
}

pub(crate) struct FeatureTrace {
    pub hidden: [f64; FEATURE_HIDDEN],
    pub feature: [f64; FEATURE_DIM],
}

pub(crate) struct HeadTrace {
    pub input: [f64; HEAD_INPUT],
    pub hidden: [f64; HEAD_HIDDEN],
    pub output: Vec3,
}

impl FieldNetwork {
    pub fn random(k_feat: usize, rng: &mut impl Rng) -> Self {
        Self {
            feature_in: Dense::random(DESCRIPTOR_DIM, FEATURE_HIDDEN, rng),
            feature_out: Dense::random(FEATURE_HIDDEN, FEATURE_DIM, rng),
            head_in: Dense::random(HEAD_INPUT, HEAD_HIDDEN, rng),
            head_out: Dense::random(HEAD_HIDDEN, 3, rng),
            k_feat,
        }
    }

    pub fn zeros(k_feat: usize) -> Self {
        Self {
            feature_in: Dense::zeros(DESCRIPTOR_DIM, FEATURE_HIDDEN),
            feature_out: Dense::zeros(FEATURE_HIDDEN, FEATURE_DIM),
            head_in: Dense::zeros(HEAD_INPUT, HEAD_HIDDEN),
            head_out: Dense::zeros(HEAD_HIDDEN, 3),
            k_feat,
        }
    }

    pub fn layers(&self) -> [(&'static str, &Dense); 4] {
        [
            ("feature.0", &self.feature_in),
            ("feature.1", &self.feature_out),
            ("head.0", &self.head_in),
            ("head.1", &self.head_out),
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 4] {
        [
            &mut self.feature_in,
            &mut self.feature_out,
            &mut self.head_in,
            &mut self.head_out,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let expect = [
            (DESCRIPTOR_DIM, FEATURE_HIDDEN),
            (FEATURE_HIDDEN, FEATURE_DIM),
            (HEAD_INPUT, HEAD_HIDDEN),
            (HEAD_HIDDEN, 3),
        ];
        for ((name, layer), (i, o)) in self.layers().into_iter().zip(expect) {
            if layer.inputs != i || layer.outputs != o {
                return Err(Error::WeightFile(format!(
                    "layer {name} is {}x{}, expected {o}x{i}",
                    layer.outputs, layer.inputs
                )));
            }
            layer.check_shape(name)?;
        }
        if self.k_feat == 0 {
            return Err(Error::WeightFile("k_feat must be positive".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (_, l) in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.parameter_count());
        let mut at = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
    }

    pub(crate) fn feature_forward(&self, descriptor: &[f64; DESCRIPTOR_DIM]) -> FeatureTrace {
        let mut hidden = [0.0; FEATURE_HIDDEN];
        self.feature_in.forward(descriptor, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut feature = [0.0; FEATURE_DIM];
        self.feature_out.forward(&hidden, &mut feature);
        feature.iter_mut().for_each(|v| *v = v.tanh());
        FeatureTrace { hidden, feature }
    }

    pub fn feature(&self, descriptor: &[f64; DESCRIPTOR_DIM]) -> PointFeature {
        PointFeature(self.feature_forward(descriptor).feature)
    }

    pub(crate) fn head_forward(&self, offset: &Vec3, feature: &[f64; FEATURE_DIM]) -> HeadTrace {
        let mut input = [0.0; HEAD_INPUT];
        input[..3].copy_from_slice(offset.as_slice());
        input[3..].copy_from_slice(feature);
        let mut hidden = [0.0; HEAD_HIDDEN];
        self.head_in.forward(&input, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = [0.0; 3];
        self.head_out.forward(&hidden, &mut out);
        HeadTrace {
            input,
            hidden,
            output: Vec3::from(out),
        }
    }

    pub fn descriptors(&self, frame: &PointCloud, index: &NeighborIndex) -> Result<Vec<[f64; DESCRIPTOR_DIM]>> {
        let k = self.k_feat.min(frame.len());
        frame
            .points
            .iter()
            .map(|p| {
                let nbrs: Vec<Point3> = index.k_nearest(p, k)?.into_iter().map(|j| frame.points[j]).collect();
                Ok(local_geometry(p, &nbrs).descriptor())
            })
            .collect()
    }
}

/// Per-point features of `frame` through the network's feature unit.
pub fn extract_features(frame: &PointCloud, network: &FieldNetwork) -> Result<Vec<PointFeature>> {
    frame.ensure_non_empty()?;
    if network.k_feat > frame.len() {
        return Err(Error::KExceedsCloudSize {
            k: network.k_feat,
            n: frame.len(),
        });
    }
    let index = NeighborIndex::new(frame)?;
    Ok(network
        .descriptors(frame, &index)?
        .iter()
        .map(|d| network.feature(d))
        .collect())
}

/// `𝒢ᵢ(x)`: the head applied to `[x - anchor, feature]`.
pub fn gradient_head(x: &Point3, anchor: &Point3, feature: &PointFeature, network: &FieldNetwork) -> Vec3 {
    network.head_forward(&(x - anchor), &feature.0).output
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_neighborhood_normal() {
        // plane through origin with normal n
        let n = Vec3::new(1.0, 2.0, 2.0).normalize();
        let u = n.cross(&Vec3::x()).normalize();
        let v = n.cross(&u);
        let mut pts = Vec::new();
        for i in -3..=3 {
            for j in -3..=3 {
                pts.push(u * i as f64 * 0.1 + v * (j as f64 * 0.13 + 0.01 * i as f64));
            }
        }
        let g = local_geometry(&pts[0], &pts);
        assert!(g.eigenvalues[2].abs() < 1e-12);
        assert!(g.normal.cross(&n).norm() < 1e-6);
        assert!(g.normal.z > 0.0);
    }

    #[test]
    fn isotropic_ball_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = Vec::new();
        while pts.len() < 10_000 {
            let p = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if p.norm() <= 1.0 {
                pts.push(p);
            }
        }
        let g = local_geometry(&Point3::zeros(), &pts);
        assert!((g.eigenvalues[0] / g.eigenvalues[2] - 1.0).abs() < 0.2);
    }

    #[test]
    fn degenerate_neighborhood() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 5];
        let g = local_geometry(&pts[0], &pts);
        assert_eq!(g.eigenvalues, [0.0; 3]);
        assert_eq!(g.normal, Vec3::z());
    }

    #[test]
    fn features_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FieldNetwork::random(8, &mut rng);
        let coords: Vec<[f64; 3]> = (0..30)
            .map(|i| [(i as f64).sin(), (i as f64 * 0.3).cos(), 0.1 * i as f64])
            .collect();
        let cloud = PointCloud::from_xyz(&coords).unwrap();
        let a = extract_features(&cloud, &net).unwrap();
        let b = extract_features(&cloud, &net).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_outputs_zero() {
        let net = FieldNetwork::zeros(4);
        let f = PointFeature([0.3; FEATURE_DIM]);
        assert_eq!(
            gradient_head(&Point3::new(1.0, 2.0, 3.0), &Point3::zeros(), &f, &net),
            Vec3::zeros()
        );
    }

    #[test]
    fn head_depends_only_on_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FieldNetwork::random(4, &mut rng);
        let f = PointFeature([0.1; FEATURE_DIM]);
        let x = Point3::new(0.1, 0.2, -0.3);
        let a = Point3::new(0.0, 0.1, 0.0);
        let v = Vec3::new(5.0, -3.0, 2.0);
        assert_relative_eq!(
            gradient_head(&x, &a, &f, &net),
            gradient_head(&(x + v), &(a + v), &f, &net),
            epsilon = 1e-12
        );
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = FieldNetwork::random(4, &mut rng);
        let mut other = FieldNetwork::zeros(4);
        other.set_flat_parameters(&net.flat_parameters());
        assert_eq!(net, other);
    }
}
