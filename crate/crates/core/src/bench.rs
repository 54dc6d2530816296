//! Synthetic benchmark: generate a scene, corrupt it, denoise it and score it.

use serde::{Deserialize, Serialize};

use crate::denoiser::{build_fields, denoise_sequence, CorrespondenceBackend, DenoiseConfig, FieldKind, FrameOutput};
use crate::error::Result;
use crate::fusion::FusionMode;
use crate::geometry::FrameSequence;
use crate::metrics::{evaluate_frame, FrameMetrics, MetricOptions, TriangleMesh};
use crate::noise::{corrupt_sequence, generate_sequence, GeneratedSequence, NoiseSpec, SceneSpec};

/// A clean scene and its corrupted copy.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub scene: GeneratedSequence,
    pub noisy: FrameSequence,
    pub sigma: f64,
}

impl BenchInput {
    pub fn new(scene: &SceneSpec, sigma: f64, noise_seed: u64) -> Result<Self> {
        let generated = generate_sequence(scene)?;
        let (noisy, _) = corrupt_sequence(&generated.clean, &NoiseSpec::gaussian(sigma, noise_seed))?;
        Ok(Self {
            scene: generated,
            noisy,
            sigma,
        })
    }

    /// Mean metrics of `frames` against the clean scene.
    pub fn score(&self, frames: &FrameSequence, options: MetricOptions) -> Result<SequenceScore> {
        let meshes = self.scene.meshes.as_deref();
        score_sequence(frames, &self.scene.clean, meshes, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub cd: f64,
    pub hd: f64,
    pub p2m: Option<f64>,
}

pub fn score_sequence(
    frames: &FrameSequence,
    clean: &FrameSequence,
    meshes: Option<&[TriangleMesh]>,
    options: MetricOptions,
) -> Result<SequenceScore> {
    let per_frame: Vec<FrameMetrics> = frames
        .frames
        .iter()
        .zip(&clean.frames)
        .enumerate()
        .map(|(t, (d, c))| evaluate_frame(t, d, c, meshes.map(|m| &m[t]), options))
        .collect::<Result<_>>()?;
    let n = per_frame.len() as f64;
    let p2m: Option<Vec<f64>> = per_frame.iter().map(|f| f.p2m).collect();
    Ok(SequenceScore {
        cd: per_frame.iter().map(|f| f.cd).sum::<f64>() / n,
        hd: per_frame.iter().map(|f| f.hd).sum::<f64>() / n,
        p2m: p2m.map(|v| v.iter().sum::<f64>() / n),
    })
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub outputs: Vec<FrameOutput>,
    pub denoised: FrameSequence,
    pub noisy_score: SequenceScore,
    pub score: SequenceScore,
}

/// Denoises `input` with the KDE or oracle backend and scores the result.
pub fn run_case(input: &BenchInput, config: &DenoiseConfig, options: MetricOptions) -> Result<BenchRun> {
    let clean = (config.field == FieldKind::Oracle).then_some(&input.scene.clean);
    let fields = build_fields(&input.noisy, clean, None, config)?;
    let outputs = denoise_sequence(&input.noisy, &fields, config)?;
    let denoised = FrameSequence::new(outputs.iter().map(|o| o.cloud.clone()).collect())?;
    Ok(BenchRun {
        noisy_score: input.score(&input.noisy, options)?,
        score: input.score(&denoised, options)?,
        denoised,
        outputs,
    })
}

/// One row of the ablation grid, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sigma: f64,
    pub fusion: FusionMode,
    pub correspondence: CorrespondenceBackend,
    pub seeds: usize,
    pub cd_noisy: f64,
    pub cd: f64,
    pub hd_noisy: f64,
    pub hd: f64,
    pub p2m_noisy: Option<f64>,
    pub p2m: Option<f64>,
}

pub const BENCH_CSV_HEADER: &str =
    "sigma,fusion,corr,seeds,cd_noisy,cd,cd_scaled,hd_noisy,hd,hd_scaled,p2m_noisy,p2m,p2m_scaled";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        use crate::metrics::{CD_SCALE, HD_SCALE, P2M_SCALE};
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let scaled = |v: Option<f64>| v.map(|v| format!("{:.6}", v * P2M_SCALE)).unwrap_or_default();
        format!(
            "{},{},{},{},{:.9e},{:.9e},{:.6},{:.9e},{:.9e},{:.6},{},{},{}",
            self.sigma,
            self.fusion,
            match self.correspondence {
                CorrespondenceBackend::Gradient => "gradient",
                CorrespondenceBackend::Icp => "icp",
            },
            self.seeds,
            self.cd_noisy,
            self.cd,
            self.cd * CD_SCALE,
            self.hd_noisy,
            self.hd,
            self.hd * HD_SCALE,
            opt(self.p2m_noisy),
            opt(self.p2m),
            scaled(self.p2m),
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchGrid {
    pub scene: SceneSpec,
    pub sigmas: Vec<f64>,
    pub fusions: Vec<FusionMode>,
    pub correspondences: Vec<CorrespondenceBackend>,
    pub seeds: Vec<u64>,
    pub config: DenoiseConfig,
    pub options: MetricOptions,
}

/// Runs every (σ × fusion × correspondence) cell. The correspondence backend
/// only matters for gradient fusion, so other modes are computed once and
/// reported under each backend.
pub fn run_grid(grid: &BenchGrid, mut progress: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &sigma in &grid.sigmas {
        let inputs: Vec<BenchInput> = grid
            .seeds
            .iter()
            .map(|&s| BenchInput::new(&SceneSpec { seed: s, ..grid.scene }, sigma, s.wrapping_add(1000)))
            .collect::<Result<_>>()?;
        for &fusion in &grid.fusions {
            let mut shared: Option<BenchRow> = None;
            for &corr in &grid.correspondences {
                let row = match (&shared, fusion) {
                    (Some(r), f) if f != FusionMode::Gradient => BenchRow {
                        correspondence: corr,
                        ..r.clone()
                    },
                    _ => {
                        let config = DenoiseConfig {
                            fusion,
                            correspondence: corr,
                            ..grid.config.clone()
                        };
                        let runs: Vec<BenchRun> = inputs
                            .iter()
                            .map(|i| run_case(i, &config, grid.options))
                            .collect::<Result<_>>()?;
                        let n = runs.len() as f64;
                        let mean = |f: &dyn Fn(&BenchRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
                        let mean_opt = |f: &dyn Fn(&BenchRun) -> Option<f64>| {
                            runs.iter()
                                .map(f)
                                .collect::<Option<Vec<f64>>>()
                                .map(|v| v.iter().sum::<f64>() / n)
                        };
                        BenchRow {
                            sigma,
                            fusion,
                            correspondence: corr,
                            seeds: runs.len(),
                            cd_noisy: mean(&|r| r.noisy_score.cd),
                            cd: mean(&|r| r.score.cd),
                            hd_noisy: mean(&|r| r.noisy_score.hd),
                            hd: mean(&|r| r.score.hd),
                            p2m_noisy: mean_opt(&|r| r.noisy_score.p2m),
                            p2m: mean_opt(&|r| r.score.p2m),
                        }
                    }
                };
                progress(&row);
                shared = Some(row.clone());
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
