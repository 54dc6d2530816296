//! Patch-wise temporal denoising of a frame sequence.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{icp_with_index, search_correspondence, SearchConfig, SearchResult, StepSchedule};
use crate::error::{Error, Result};
use crate::field::{GradientField, KdeField, KdeUnits, LearnedField, OracleField, SharedField};
use crate::fusion::{fuse_fields, FusionMode};
use crate::geometry::{
    extract_patch, farthest_point_sampling_points, FrameSequence, NeighborIndex, Patch, Point3, PointCloud,
    RigidTransform,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Oracle,
    #[default]
    Kde,
    Learned,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "kde" => Ok(Self::Kde),
            "learned" => Ok(Self::Learned),
            other => Err(Error::config("field", format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrespondenceBackend {
    #[default]
    Gradient,
    Icp,
}

impl FromStr for CorrespondenceBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Self::Gradient),
            "icp" => Ok(Self::Icp),
            other => Err(Error::config("corr", format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    /// Patch size `m`, clamped to the frame size.
    pub patch_size: usize,
    /// Patch-center count `M`; `None` keeps three-fold coverage.
    pub patch_centers: Option<usize>,
    /// Ascent iterations `H′`.
    pub ascent_iterations: usize,
    pub alpha: StepSchedule,
    pub field: FieldKind,
    /// KDE bandwidth as a multiple of the mean nearest-neighbor spacing.
    pub kde_bandwidth: f64,
    /// KDE kernels farther than this many bandwidths are ignored.
    pub kde_truncation: f64,
    pub fusion: FusionMode,
    pub correspondence: CorrespondenceBackend,
    /// Search settings; `tolerance` is relative to the frame bounding radius.
    pub search: SearchConfig,
    /// Farthest-point-sampling seed for patch centers and the final merge.
    pub seed: u64,
    /// Worker threads for the patch map; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            patch_size: 1000,
            patch_centers: None,
            ascent_iterations: 50,
            alpha: StepSchedule::new(0.008, 0.95),
            field: FieldKind::Kde,
            kde_bandwidth: 1.0,
            kde_truncation: 6.0,
            fusion: FusionMode::Gradient,
            correspondence: CorrespondenceBackend::Gradient,
            search: SearchConfig::default(),
            seed: 0,
            threads: None,
        }
    }
}

/// Effective `(m, M)` for a frame of `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchLayout {
    pub patch_size: usize,
    pub centers: usize,
}

impl DenoiseConfig {
    /// Settings tuned for desk-size clouds (a few thousand points per frame)
    /// with a kernel-density field in displacement units.
    pub fn desk() -> Self {
        Self {
            patch_size: 200,
            ascent_iterations: 20,
            alpha: StepSchedule::new(0.05, 0.95),
            kde_bandwidth: 1.5,
            kde_truncation: 4.0,
            search: SearchConfig {
                max_iterations: 30,
                translation: StepSchedule::new(1.0, 0.95),
                rotation: StepSchedule::new(1.0, 0.95),
                ..SearchConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("m", "must be >= 1"));
        }
        if self.patch_centers == Some(0) {
            return Err(Error::config("M", "must be >= 1"));
        }
        self.alpha.validate("alpha")?;
        self.search.validate()?;
        if !(self.kde_bandwidth > 0.0) || !self.kde_bandwidth.is_finite() {
            return Err(Error::config("kde_bandwidth", "must be > 0"));
        }
        if !(self.kde_truncation > 0.0) {
            return Err(Error::config("kde_truncation", "must be > 0"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be >= 1"));
        }
        Ok(())
    }

    /// Resolves `(m, M)` for `n` points and checks `m·M ≥ N`.
    pub fn layout(&self, n: usize) -> Result<PatchLayout> {
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let m = self.patch_size.min(n);
        let centers = match self.patch_centers {
            Some(c) if c > n => {
                return Err(Error::config(
                    "M",
                    format!("{c} centers exceed the {n} points of the frame"),
                ))
            }
            Some(c) => c,
            None => (3 * n).div_ceil(m).min(n),
        };
        if m * centers < n {
            return Err(Error::config(
                "M",
                format!("m·M = {m}·{centers} = {} does not cover N = {n}", m * centers),
            ));
        }
        Ok(PatchLayout { patch_size: m, centers })
    }

    pub fn validate_for(&self, sequence: &FrameSequence) -> Result<()> {
        self.validate()?;
        for frame in &sequence.frames {
            self.layout(frame.len())?;
        }
        Ok(())
    }
}

/// Builds one field per frame with the configured backend.
pub fn build_fields(
    noisy: &FrameSequence,
    clean: Option<&FrameSequence>,
    learned: Option<&LearnedField>,
    config: &DenoiseConfig,
) -> Result<Vec<SharedField>> {
    for frame in &noisy.frames {
        frame.ensure_non_empty()?;
    }
    match config.field {
        FieldKind::Oracle => {
            let clean = clean.ok_or_else(|| Error::config("field", "oracle backend needs clean frames"))?;
            if clean.len() != noisy.len() {
                return Err(Error::config(
                    "field",
                    format!("{} clean frames for {} noisy frames", clean.len(), noisy.len()),
                ));
            }
            clean
                .frames
                .iter()
                .map(|f| Ok(Arc::new(OracleField::new(f)?) as SharedField))
                .collect()
        }
        FieldKind::Kde => noisy
            .frames
            .iter()
            .map(|f| {
                let kde = KdeField::with_spacing_bandwidth(f, config.kde_bandwidth)?
                    .truncated(config.kde_truncation)
                    .with_units(KdeUnits::Displacement);
                Ok(Arc::new(kde) as SharedField)
            })
            .collect(),
        FieldKind::Learned => {
            let learned = learned.ok_or_else(|| Error::config("field", "learned backend needs a weight file"))?;
            noisy
                .frames
                .iter()
                .map(|f| Ok(Arc::new(learned.rebind(f)?) as SharedField))
                .collect()
        }
    }
}

/// `x ← x + α^(h) 𝒢̄(x)` for `h = 1..=H′`, each point independently.
pub fn denoise_patch(
    points: &[Point3],
    field: &dyn GradientField,
    alpha: &StepSchedule,
    iterations: usize,
) -> Result<Vec<Point3>> {
    let mut out = points.to_vec();
    for (i, x) in out.iter_mut().enumerate() {
        for h in 1..=iterations {
            let next = field.ascend(x, alpha.at(h));
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "field value at patch point {i}, iteration {h}"
                )));
            }
            *x = next;
        }
    }
    Ok(out)
}

/// Farthest-point downsampling of the overlap multiset back to `n` points.
pub fn merge_patches(points: &[Point3], n: usize, seed: u64) -> Result<PointCloud> {
    if points.len() < n {
        return Err(Error::InsufficientCoverage {
            have: points.len(),
            need: n,
        });
    }
    let picked = farthest_point_sampling_points(points, n, seed)?;
    PointCloud::new(picked.into_iter().map(|i| points[i]).collect())
}

/// Outcome of one patch's search in one adjacent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSummary {
    pub adjacent: usize,
    pub transform: RigidTransform,
    pub residual: f64,
    pub initial_residual: f64,
    pub tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest change of an intra-patch distance (to the center point and to
    /// the previous point) caused by the transform.
    pub rigidity_error: f64,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchReport {
    pub center: usize,
    pub searches: Vec<SearchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame: usize,
    pub points: usize,
    pub patch_size: usize,
    pub patches: usize,
    pub merged_from: usize,
    pub searches: usize,
    pub converged: usize,
    pub mean_residual: f64,
    pub mean_initial_residual: f64,
    pub mean_iterations: f64,
    pub max_rigidity_error: f64,
    pub max_orthonormal_deviation: f64,
    pub warnings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub cloud: PointCloud,
    pub stats: FrameStats,
    pub patches: Vec<PatchReport>,
}

fn rigidity_error(before: &Patch, after: &Patch) -> f64 {
    let (a, b) = (&before.points, &after.points);
    let mut worst = 0.0f64;
    for i in 1..a.len() {
        for j in [0, i - 1] {
            let d0 = (a[i] - a[j]).norm();
            let d1 = (b[i] - b[j]).norm();
            worst = worst.max((d0 - d1).abs());
        }
    }
    worst
}

fn summarize(adjacent: usize, patch: &Patch, result: &SearchResult, tolerance: f64) -> SearchSummary {
    SearchSummary {
        adjacent,
        transform: result.transform,
        residual: result.residual,
        initial_residual: result.initial_residual,
        tolerance,
        iterations: result.iterations,
        converged: result.converged,
        rigidity_error: rigidity_error(patch, &result.patch),
        warnings: result.warnings.len(),
    }
}

struct FrameContext<'a> {
    fields: &'a [SharedField],
    indices: Vec<Option<NeighborIndex>>,
    tolerances: Vec<f64>,
}

fn run_patch(
    ctx: &FrameContext<'_>,
    frame: &PointCloud,
    index: &NeighborIndex,
    t: usize,
    center: usize,
    m: usize,
    config: &DenoiseConfig,
) -> Result<(Vec<Point3>, PatchReport)> {
    let patch = extract_patch(frame, index, center, m, t)?;
    let adjacent: Vec<usize> = [t.checked_sub(1), Some(t + 1)]
        .into_iter()
        .flatten()
        .filter(|&a| a < ctx.fields.len())
        .collect();

    let mut searches = Vec::new();
    let mut pairs: Vec<(&dyn GradientField, RigidTransform)> = Vec::new();
    for &a in &adjacent {
        let field: &dyn GradientField = ctx.fields[a].as_ref();
        let transform = match config.fusion {
            FusionMode::None => continue,
            FusionMode::Mean => RigidTransform::identity(),
            FusionMode::Gradient => {
                let tolerance = ctx.tolerances[a];
                let result = match config.correspondence {
                    CorrespondenceBackend::Gradient => {
                        let search = SearchConfig {
                            tolerance,
                            ..config.search
                        };
                        search_correspondence(&patch, field, &search)?
                    }
                    CorrespondenceBackend::Icp => {
                        let target = ctx.indices[a].as_ref().expect("index built for icp");
                        icp_with_index(&patch, target, config.search.max_iterations, tolerance * tolerance)?
                    }
                };
                searches.push(summarize(a, &patch, &result, tolerance));
                result.transform
            }
        };
        pairs.push((field, transform));
    }

    let fused = fuse_fields(ctx.fields[t].as_ref(), &pairs, config.fusion)?;
    let moved = denoise_patch(&patch.points, &fused, &config.alpha, config.ascent_iterations)?;
    Ok((moved, PatchReport { center, searches }))
}

/// Denoises frame `t` (0-based) of `noisy` using one prebuilt field per frame.
pub fn denoise_frame(
    noisy: &FrameSequence,
    fields: &[SharedField],
    t: usize,
    config: &DenoiseConfig,
) -> Result<FrameOutput> {
    config.validate()?;
    if fields.len() != noisy.len() {
        return Err(Error::InvalidArgument(format!(
            "{} fields for {} frames",
            fields.len(),
            noisy.len()
        )));
    }
    if t >= noisy.len() {
        return Err(Error::InvalidArgument(format!(
            "frame {t} out of range for {} frames",
            noisy.len()
        )));
    }
    let ctx = frame_context(noisy, fields, config, Some(t))?;
    with_pool(config.threads, || denoise_frame_in(noisy, &ctx, t, config))
}

fn frame_context<'a>(
    noisy: &FrameSequence,
    fields: &'a [SharedField],
    config: &DenoiseConfig,
    only: Option<usize>,
) -> Result<FrameContext<'a>> {
    let needed = |a: usize| only.is_none_or(|t| a + 1 >= t && a <= t + 1);
    let mut indices = Vec::with_capacity(noisy.len());
    let mut tolerances = Vec::with_capacity(noisy.len());
    for (a, frame) in noisy.frames.iter().enumerate() {
        frame.ensure_non_empty()?;
        let icp = config.fusion == FusionMode::Gradient && config.correspondence == CorrespondenceBackend::Icp;
        indices.push(if icp && needed(a) {
            Some(NeighborIndex::new(frame)?)
        } else {
            None
        });
        tolerances.push(config.search.tolerance * frame.bounding_radius()?.max(f64::MIN_POSITIVE));
    }
    Ok(FrameContext {
        fields,
        indices,
        tolerances,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(job),
    }
}

fn denoise_frame_in(
    noisy: &FrameSequence,
    ctx: &FrameContext<'_>,
    t: usize,
    config: &DenoiseConfig,
) -> Result<FrameOutput> {
    let frame = &noisy.frames[t];
    let n = frame.len();
    let layout = config.layout(n)?;
    let index = NeighborIndex::new(frame)?;
    let centers = farthest_point_sampling_points(&frame.points, layout.centers, config.seed)?;

    let results: Vec<(Vec<Point3>, PatchReport)> = centers
        .par_iter()
        .map(|&c| run_patch(ctx, frame, &index, t, c, layout.patch_size, config))
        .collect::<Result<_>>()?;

    let mut merged = Vec::with_capacity(layout.centers * layout.patch_size);
    let mut patches = Vec::with_capacity(results.len());
    for (points, report) in results {
        merged.extend(points);
        patches.push(report);
    }
    let merged_from = merged.len();
    let cloud = merge_patches(&merged, n, config.seed)?;

    let searches: Vec<&SearchSummary> = patches.iter().flat_map(|p| &p.searches).collect();
    let count = searches.len().max(1) as f64;
    let stats = FrameStats {
        frame: t,
        points: n,
        patch_size: layout.patch_size,
        patches: layout.centers,
        merged_from,
        searches: searches.len(),
        converged: searches.iter().filter(|s| s.converged).count(),
        mean_residual: searches.iter().map(|s| s.residual).sum::<f64>() / count,
        mean_initial_residual: searches.iter().map(|s| s.initial_residual).sum::<f64>() / count,
        mean_iterations: searches.iter().map(|s| s.iterations as f64).sum::<f64>() / count,
        max_rigidity_error: searches.iter().map(|s| s.rigidity_error).fold(0.0, f64::max),
        max_orthonormal_deviation: searches
            .iter()
            .map(|s| s.transform.orthonormal_deviation())
            .fold(0.0, f64::max),
        warnings: searches.iter().map(|s| s.warnings).sum(),
        cd: None,
    };
    Ok(FrameOutput {
        cloud: cloud.with_source(format!("frame {t}")),
        stats,
        patches,
    })
}

/// Denoises every frame, reusing the per-frame fields.
pub fn denoise_sequence(
    noisy: &FrameSequence,
    fields: &[SharedField],
    config: &DenoiseConfig,
) -> Result<Vec<FrameOutput>> {
    config.validate_for(noisy)?;
    if fields.len() != noisy.len() {
        return Err(Error::InvalidArgument(format!(
            "{} fields for {} frames",
            fields.len(),
            noisy.len()
        )));
    }
    let ctx = frame_context(noisy, fields, config, None)?;
    with_pool(config.threads, || {
        (0..noisy.len())
            .map(|t| denoise_frame_in(noisy, &ctx, t, config))
            .collect()
    })
}

/// Output clouds of a denoised sequence.
pub fn output_sequence(outputs: &[FrameOutput]) -> Result<FrameSequence> {
    FrameSequence::new(outputs.iter().map(|o| o.cloud.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ConstantField;
    use crate::geometry::Vec3;

    fn plane(n_side: usize, z: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                pts.push(Point3::new(i as f64 / n_side as f64, j as f64 / n_side as f64, z));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn denoise_patch_examples() {
        let pts = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-1.0, 0.0, 2.0)];
        let zero = ConstantField(Vec3::zeros());
        let sched = StepSchedule::new(0.5, 0.9);
        assert_eq!(denoise_patch(&pts, &zero, &sched, 7).unwrap(), pts);
        assert_eq!(denoise_patch(&pts, &ConstantField(Vec3::x()), &sched, 0).unwrap(), pts);

        let clean = plane(10, 0.0);
        let oracle = OracleField::new(&clean).unwrap();
        let hovering: Vec<Point3> = clean.points.iter().map(|p| p + Vec3::new(0.0, 0.0, 0.25)).collect();
        let full = StepSchedule::new(1.0, 1.0);
        let landed = denoise_patch(&hovering, &oracle, &full, 1).unwrap();
        assert!(landed.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn non_finite_field_reports_point() {
        let pts = vec![Point3::zeros(), Point3::x()];
        let nan = ConstantField(Vec3::new(0.0, f64::NAN, 0.0));
        let err = denoise_patch(&pts, &nan, &StepSchedule::new(0.1, 1.0), 3).unwrap_err();
        assert!(err.to_string().contains("patch point 0"));
    }

    #[test]
    fn merge_examples() {
        let s = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 5.0, 0.0),
        ];
        let all = merge_patches(&s, 3, 1).unwrap();
        let mut got: Vec<_> = all.points.iter().map(|p| (p.x, p.y)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, vec![(0.0, 0.0), (0.0, 5.0), (1.0, 0.0)]);

        let one = merge_patches(&s, 1, 2).unwrap();
        assert_eq!(one.points, vec![s[2]]);

        let dup = vec![Point3::zeros(), Point3::zeros(), Point3::x()];
        let two = merge_patches(&dup, 2, 1).unwrap();
        assert_eq!(two.points, vec![Point3::zeros(), Point3::x()]);

        assert!(matches!(
            merge_patches(&s, 4, 0),
            Err(Error::InsufficientCoverage { have: 3, need: 4 })
        ));
    }

    #[test]
    fn layout_rules() {
        let config = DenoiseConfig {
            patch_size: 1000,
            ..Default::default()
        };
        assert_eq!(
            config.layout(30000).unwrap(),
            PatchLayout {
                patch_size: 1000,
                centers: 90
            }
        );
        assert_eq!(
            config.layout(500).unwrap(),
            PatchLayout {
                patch_size: 500,
                centers: 3
            }
        );
        let thin = DenoiseConfig {
            patch_size: 10,
            patch_centers: Some(2),
            ..Default::default()
        };
        assert!(thin.layout(100).unwrap_err().is_config_error());
        let many = DenoiseConfig {
            patch_centers: Some(101),
            ..Default::default()
        };
        assert!(many.layout(100).is_err());
    }

    #[test]
    fn oracle_plane_lands_exactly() {
        let clean = FrameSequence::new(vec![plane(12, 0.0)]).unwrap();
        let noisy = FrameSequence::new(vec![clean.frames[0].map(|p| p + Vec3::new(0.0, 0.0, 0.05))]).unwrap();
        let config = DenoiseConfig {
            patch_size: 40,
            ascent_iterations: 1,
            alpha: StepSchedule::new(1.0, 1.0),
            field: FieldKind::Oracle,
            fusion: FusionMode::None,
            ..Default::default()
        };
        let fields = build_fields(&noisy, Some(&clean), None, &config).unwrap();
        let out = denoise_sequence(&noisy, &fields, &config).unwrap();
        assert_eq!(out[0].cloud.len(), 144);
        assert!(out[0].cloud.points.iter().all(|p| clean.frames[0].points.contains(p)));
    }

    #[test]
    fn single_frame_ignores_fusion_mode() {
        let noisy = FrameSequence::new(vec![
            plane(8, 0.0).map(|p| p + Vec3::new(0.0, 0.0, 0.01 * (p.x * 31.0).sin()))
        ])
        .unwrap();
        let base = DenoiseConfig {
            patch_size: 20,
            ..Default::default()
        };
        let fields = build_fields(&noisy, None, None, &base).unwrap();
        let a = denoise_sequence(&noisy, &fields, &base).unwrap();
        let b = denoise_sequence(
            &noisy,
            &fields,
            &DenoiseConfig {
                fusion: FusionMode::None,
                ..base
            },
        )
        .unwrap();
        assert_eq!(a[0].cloud.points, b[0].cloud.points);
    }

    #[test]
    fn parse_backends() {
        assert_eq!(
            "icp".parse::<CorrespondenceBackend>().unwrap(),
            CorrespondenceBackend::Icp
        );
        assert_eq!("learned".parse::<FieldKind>().unwrap(), FieldKind::Learned);
        assert!("nn".parse::<FieldKind>().unwrap_err().is_config_error());
    }
}
