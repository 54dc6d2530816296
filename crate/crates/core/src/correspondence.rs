//! Rigid-body temporal correspondence: a patch is translated by the mean
//! field vector and rotated by the torque the field exerts about its center
//! (through the unit-mass inertia tensor) until the field balances. An ICP
//! baseline is provided for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GradientField;
use crate::geometry::{Mat3, NeighborIndex, Patch, Point3, PointCloud, RigidTransform, Vec3};

/// Geometric step schedule `initial · decay^h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl StepSchedule {
    pub const fn new(initial: f64, decay: f64) -> Self {
        Self { initial, decay }
    }

    /// Step for 1-based iteration `h`.
    pub fn at(&self, h: usize) -> f64 {
        self.initial * self.decay.powi(h as i32)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.initial > 0.0) || !self.initial.is_finite() {
            return Err(Error::config(
                name,
                format!("initial step must be > 0, got {}", self.initial),
            ));
        }
        if !(self.decay > 0.0) || !self.decay.is_finite() {
            return Err(Error::config(name, format!("decay must be > 0, got {}", self.decay)));
        }
        Ok(())
    }
}

/// Largest rotation applied in a single step.
pub const MAX_STEP_ANGLE: f64 = std::f64::consts::PI / 8.0;

/// Consecutive energy increases before both schedules are halved.
const DIVERGENCE_PATIENCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Maximum iterations `H`.
    pub max_iterations: usize,
    pub translation: StepSchedule,
    pub rotation: StepSchedule,
    /// Stop once `‖mean G‖ ≤ tolerance`.
    pub tolerance: f64,
    /// Inertia regularization `λ`: `I + λ tr(I)/3 · Id`.
    pub inertia_regularization: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            translation: StepSchedule::new(0.01, 0.95),
            rotation: StepSchedule::new(0.01, 0.95),
            tolerance: 1e-4,
            inertia_regularization: 1e-6,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("H", "must be >= 1"));
        }
        self.translation.validate("beta")?;
        self.rotation.validate("gamma")?;
        if !(self.tolerance > 0.0) {
            return Err(Error::config("tolerance", "must be > 0"));
        }
        if !(self.inertia_regularization >= 0.0) {
            return Err(Error::config("inertia_regularization", "must be >= 0"));
        }
        Ok(())
    }

    /// Tolerance `1e-4 × radius` for a frame of the given bounding radius.
    pub fn with_frame_radius(mut self, radius: f64) -> Self {
        self.tolerance = 1e-4 * radius;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchWarning {
    /// The inertia tensor was singular; the step used no rotation.
    SingularInertia,
    /// ICP could not solve for a rotation; identity was used.
    DegenerateCorrespondence,
    /// The energy rose repeatedly and the schedules were halved.
    SchedulesHalved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// `‖mean G‖` before the step.
    pub residual: f64,
    /// `Σ ‖G‖²` before the step.
    pub energy: f64,
    pub translation_norm: f64,
    pub rotation_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Composed transform from the input patch to the balanced patch.
    pub transform: RigidTransform,
    pub patch: Patch,
    /// `‖mean G‖` over the returned patch.
    pub residual: f64,
    pub initial_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    pub warnings: Vec<SearchWarning>,
}

impl SearchResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,residual,energy,translation_norm,rotation_angle\n");
        for r in &self.trace {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                r.iteration, r.residual, r.energy, r.translation_norm, r.rotation_angle
            ));
        }
        out
    }
}

/// Unit-mass inertia tensor of the patch about its center.
pub fn inertia_matrix(patch: &Patch) -> Mat3 {
    let mut m = Mat3::zeros();
    for p in &patch.points {
        let r = p - patch.center;
        let (x, y, z) = (r.x, r.y, r.z);
        m[(0, 0)] += y * y + z * z;
        m[(1, 1)] += x * x + z * z;
        m[(2, 2)] += x * x + y * y;
        m[(0, 1)] -= x * y;
        m[(0, 2)] -= x * z;
        m[(1, 2)] -= y * z;
    }
    m[(1, 0)] = m[(0, 1)];
    m[(2, 0)] = m[(0, 2)];
    m[(2, 1)] = m[(1, 2)];
    m
}

fn torque_from(patch: &Patch, gradients: &[Vec3]) -> Vec3 {
    patch
        .points
        .iter()
        .zip(gradients)
        .fold(Vec3::zeros(), |acc, (p, g)| acc + (p - patch.center).cross(g))
}

/// `Σ (x - x̄) × G(x)` over the patch.
pub fn torque(patch: &Patch, field: &dyn GradientField) -> Vec3 {
    let g: Vec<Vec3> = patch.points.iter().map(|p| field.eval(p)).collect();
    torque_from(patch, &g)
}

fn rotation_from(patch: &Patch, torque: &Vec3, gamma: f64, lambda: f64) -> (RigidTransform, bool) {
    let inertia = inertia_matrix(patch);
    let regularized = inertia + Mat3::identity() * (lambda * inertia.trace() / 3.0);
    if torque.norm_squared() == 0.0 {
        return (RigidTransform::identity(), false);
    }
    match regularized.try_inverse() {
        Some(inv) if regularized.trace() > 0.0 => {
            let mut theta = inv * torque * gamma;
            if !theta.iter().all(|v| v.is_finite()) {
                return (RigidTransform::identity(), true);
            }
            let angle = theta.norm();
            if angle > MAX_STEP_ANGLE {
                theta *= MAX_STEP_ANGLE / angle;
            }
            (RigidTransform::rotation_about(&theta, patch.center), false)
        }
        _ => (RigidTransform::identity(), true),
    }
}

/// Rotation about the patch center by `θ = γ (I + λ tr(I)/3 Id)⁻¹ τ`,
/// clamped to [`MAX_STEP_ANGLE`]. The flag is set when the inertia is singular.
pub fn rotation_step(patch: &Patch, field: &dyn GradientField, gamma: f64, lambda: f64) -> (RigidTransform, bool) {
    rotation_from(patch, &torque(patch, field), gamma, lambda)
}

/// `β · mean G` over the patch.
pub fn translation_step(patch: &Patch, field: &dyn GradientField, beta: f64) -> Vec3 {
    let g: Vec<Vec3> = patch.points.iter().map(|p| field.eval(p)).collect();
    mean_vector(&g) * beta
}

fn mean_vector(v: &[Vec3]) -> Vec3 {
    v.iter().fold(Vec3::zeros(), |a, g| a + g) / v.len() as f64
}

/// Moves `patch` in `field` as a rigid body until the mean field vector
/// falls below the tolerance or the iteration budget runs out.
pub fn search_correspondence(patch: &Patch, field: &dyn GradientField, config: &SearchConfig) -> Result<SearchResult> {
    config.validate()?;
    if patch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut current = patch.clone();
    let mut total = RigidTransform {
        pivot: patch.center,
        ..RigidTransform::identity()
    };
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut schedule_scale = 1.0;
    let mut rising = 0usize;
    let mut last_energy = f64::INFINITY;
    let mut initial_residual = None;

    let evaluate = |p: &Patch| -> Result<Vec<Vec3>> {
        let g: Vec<Vec3> = p.points.iter().map(|x| field.eval(x)).collect();
        if let Some(i) = g.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!(
                "field value at patch point {i} ({:?})",
                p.points[i].as_slice()
            )));
        }
        Ok(g)
    };

    let mut iterations = 0;
    let (residual, converged) = loop {
        let g = evaluate(&current)?;
        let mean = mean_vector(&g);
        let residual = mean.norm();
        let energy: f64 = g.iter().map(|v| v.norm_squared()).sum();
        initial_residual.get_or_insert(residual);
        if residual <= config.tolerance {
            break (residual, true);
        }
        if iterations == config.max_iterations {
            break (residual, false);
        }
        iterations += 1;
        let h = iterations;

        if energy > last_energy {
            rising += 1;
            if rising >= DIVERGENCE_PATIENCE {
                schedule_scale *= 0.5;
                rising = 0;
                if !warnings.contains(&SearchWarning::SchedulesHalved) {
                    warnings.push(SearchWarning::SchedulesHalved);
                }
            }
        } else {
            rising = 0;
        }
        last_energy = energy;

        let beta = config.translation.at(h) * schedule_scale;
        let gamma = config.rotation.at(h) * schedule_scale;
        let tau = torque_from(&current, &g);
        let (rotation, singular) = rotation_from(&current, &tau, gamma, config.inertia_regularization);
        if singular && !warnings.contains(&SearchWarning::SingularInertia) {
            warnings.push(SearchWarning::SingularInertia);
        }
        let shift = mean * beta;
        let step = RigidTransform {
            translation: shift,
            ..rotation
        };
        trace.push(TraceRow {
            iteration: h,
            residual,
            energy,
            translation_norm: shift.norm(),
            rotation_angle: rotation.angle(),
        });
        total = RigidTransform::compose(&step, &total);
        current = patch.apply_transform(&total);
    };

    Ok(SearchResult {
        transform: total,
        patch: current,
        residual,
        initial_residual: initial_residual.unwrap_or(residual),
        iterations,
        converged,
        trace,
        warnings,
    })
}

/// Least-squares rigid motion mapping `source` onto `target` (Kabsch with
/// reflection correction). `None` when the cross-covariance is too degenerate.
pub fn fit_rigid(source: &[Point3], target: &[Point3]) -> Option<(Mat3, Vec3)> {
    let n = source.len() as f64;
    let cs = source.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let ct = target.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    if source.len() == 1 {
        return Some((Mat3::identity(), ct - cs));
    }
    let mut h = Mat3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let sv = svd.singular_values;
    if sv[0] <= 0.0 || sv.iter().filter(|s| **s > 1e-12 * sv[0]).count() < 2 {
        return None;
    }
    let mut r = v_t.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut d = Mat3::identity();
        d[(2, 2)] = -1.0;
        r = v_t.transpose() * d * u.transpose();
    }
    Some((r, ct - r * cs))
}

/// Point-to-point ICP of `patch` against `target`.
pub fn icp_correspondence(
    patch: &Patch,
    target: &PointCloud,
    max_iterations: usize,
    tolerance: f64,
) -> Result<SearchResult> {
    let index = NeighborIndex::new(target)?;
    icp_with_index(patch, &index, max_iterations, tolerance)
}

pub fn icp_with_index(
    patch: &Patch,
    index: &NeighborIndex,
    max_iterations: usize,
    tolerance: f64,
) -> Result<SearchResult> {
    if patch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let target = index.points();
    let mut current = patch.clone();
    let mut total = RigidTransform {
        pivot: patch.center,
        ..RigidTransform::identity()
    };
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut prev_mse = f64::INFINITY;
    let mut initial_residual = None;
    let mut iterations = 0;
    let mut converged = false;

    let matches = |p: &Patch| -> Vec<Point3> { p.points.iter().map(|x| target[index.nearest(x)]).collect() };

    while iterations < max_iterations.max(1) {
        let matched = matches(&current);
        let offsets: Vec<Vec3> = matched.iter().zip(&current.points).map(|(t, s)| t - s).collect();
        let mse = offsets.iter().map(|d| d.norm_squared()).sum::<f64>() / offsets.len() as f64;
        let residual = mean_vector(&offsets).norm();
        initial_residual.get_or_insert(residual);
        iterations += 1;

        let (rotation, offset) = match fit_rigid(&current.points, &matched) {
            Some(fit) => fit,
            None => {
                if !warnings.contains(&SearchWarning::DegenerateCorrespondence) {
                    warnings.push(SearchWarning::DegenerateCorrespondence);
                }
                (Mat3::identity(), mean_vector(&offsets))
            }
        };
        let step = RigidTransform {
            rotation,
            translation: offset,
            pivot: Point3::zeros(),
        };
        trace.push(TraceRow {
            iteration: iterations,
            residual,
            energy: mse * offsets.len() as f64,
            translation_norm: step.canonical().1.norm(),
            rotation_angle: step.angle(),
        });
        total = RigidTransform::compose(&step, &total);
        current = patch.apply_transform(&total);

        if (prev_mse - mse).abs() < tolerance || mse == 0.0 {
            converged = true;
            break;
        }
        prev_mse = mse;
    }

    let matched = matches(&current);
    let offsets: Vec<Vec3> = matched.iter().zip(&current.points).map(|(t, s)| t - s).collect();
    Ok(SearchResult {
        transform: total,
        residual: mean_vector(&offsets).norm(),
        initial_residual: initial_residual.unwrap_or(0.0),
        patch: current,
        iterations,
        converged,
        trace,
        warnings,
    })
}
