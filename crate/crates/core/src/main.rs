use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use driftfield::bench::{rows_to_csv, run_grid, BenchGrid, BENCH_CSV_HEADER};
use driftfield::config::{Profile, RunConfig};
use driftfield::correspondence::{icp_correspondence, search_correspondence, SearchConfig};
use driftfield::denoiser::{build_fields, denoise_sequence, CorrespondenceBackend, FieldKind};
use driftfield::field::{train_field, AnchorRef, LearnedField, SharedField};
use driftfield::fusion::FusionMode;
use driftfield::geometry::{extract_patch, NeighborIndex, PointCloud};
use driftfield::io::{
    manifest_dir, read_cloud, read_mesh, write_cloud, write_mesh, CloudFormat, FrameEntry, SequenceManifest,
    TransformRecord,
};
use driftfield::metrics::{evaluate_frame, MetricOptions, MetricReport};
use driftfield::noise::{corrupt_sequence, generate_sequence, Motion, SceneSpec, Shape};
use driftfield::{Error, Result};

#[derive(Parser)]
#[command(
    name = "driftfield",
    version,
    about = "Denoise dynamic point-cloud sequences with temporal gradient fields"
)]
struct Cli {
    /// Worker threads for the patch-level parallel map.
    #[arg(long, global = true, env = "DRIFTFIELD_THREADS")]
    threads: Option<usize>,
    /// Increase log verbosity (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clean sequence.
    Generate(GenerateArgs),
    /// Corrupt a sequence with Gaussian noise.
    Noise(NoiseArgs),
    /// Train a learned gradient field on one frame with a clean reference.
    TrainField(TrainArgs),
    /// Denoise a sequence.
    Denoise(DenoiseArgs),
    /// Evaluate CD / HD / P2M against clean references.
    Eval(EvalArgs),
    /// Run a single patch correspondence search.
    Correspond(CorrespondArgs),
    /// Run the ablation grid on a synthetic scene.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Plane,
    Sphere,
    Torus,
    TwoBox,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Plane => Shape::Plane,
            ShapeArg::Sphere => Shape::Sphere,
            ShapeArg::Torus => Shape::Torus,
            ShapeArg::TwoBox => Shape::TwoBox,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    Static,
    Bounce,
    Custom,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    /// `bounce` is the bouncing-and-spinning benchmark motion; `custom` uses
    /// --rotation, --translation and --bounce-height.
    #[arg(long, value_enum, default_value = "bounce")]
    motion: MotionArg,
    /// Axis-angle rotation per frame, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    rotation: [f64; 3],
    /// Translation per frame, "x,y,z".
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    translation: [f64; 3],
    #[arg(long, default_value_t = 0.0)]
    bounce_height: f64,
    /// Reuse the first frame's sampling instead of resampling every frame.
    #[arg(long)]
    no_resample: bool,
}

impl SceneArgs {
    fn spec(&self, seed: u64) -> SceneSpec {
        let motion = match self.motion {
            MotionArg::Static => Motion::default(),
            MotionArg::Bounce => Motion::bouncing(),
            MotionArg::Custom => Motion {
                rotation: self.rotation,
                translation: self.translation,
                bounce_height: self.bounce_height,
                ..Motion::default()
            },
        };
        SceneSpec {
            shape: self.shape.into(),
            points: self.points,
            frames: self.frames,
            motion,
            resample: !self.no_resample,
            seed,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    /// Input sequence manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Noise standard deviation as a fraction of the bounding radius.
    #[arg(long)]
    sigma: Option<f64>,
    /// Draw one sigma per frame from [sigma, sigma-max].
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest whose frames carry clean references.
    #[arg(long)]
    manifest: PathBuf,
    /// Frame to train on (0-based).
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Anchors averaged per query.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_feat: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Oracle,
    Kde,
    Learned,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Gradient,
    Mean,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrArg {
    Gradient,
    Icp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Standard,
    Desk,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Gradient => FusionMode::Gradient,
            FusionArg::Mean => FusionMode::Mean,
            FusionArg::None => FusionMode::None,
        }
    }
}

impl From<CorrArg> for CorrespondenceBackend {
    fn from(c: CorrArg) -> Self {
        match c {
            CorrArg::Gradient => CorrespondenceBackend::Gradient,
            CorrArg::Icp => CorrespondenceBackend::Icp,
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Hyperparameter defaults before the config file and flags apply.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// JSON run configuration layered over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    field: Option<FieldArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long, value_enum)]
    corr: Option<CorrArg>,
    /// Patch size.
    #[arg(long = "m")]
    patch_size: Option<usize>,
    /// Number of patch centers.
    #[arg(long = "M")]
    centers: Option<usize>,
    /// Correspondence iterations.
    #[arg(long = "H")]
    search_iterations: Option<usize>,
    /// Ascent iterations.
    #[arg(long = "Hp")]
    ascent_iterations: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    /// Common decay of the alpha, beta and gamma schedules.
    #[arg(long)]
    decay: Option<f64>,
    /// KDE bandwidth as a multiple of the mean point spacing.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineArgs {
    fn resolve(&self, default_profile: Profile, threads: Option<usize>) -> Result<RunConfig> {
        let profile = match self.profile {
            Some(ProfileArg::Standard) => Profile::Standard,
            Some(ProfileArg::Desk) => Profile::Desk,
            None => default_profile,
        };
        let mut run = RunConfig::layered(profile, self.config.as_deref())?;
        let d = &mut run.denoise;
        if let Some(f) = self.field {
            d.field = match f {
                FieldArg::Oracle => FieldKind::Oracle,
                FieldArg::Kde => FieldKind::Kde,
                FieldArg::Learned => FieldKind::Learned,
            };
        }
        if let Some(f) = self.fusion {
            d.fusion = f.into();
        }
        if let Some(c) = self.corr {
            d.correspondence = c.into();
        }
        set(&mut d.patch_size, self.patch_size);
        if self.centers.is_some() {
            d.patch_centers = self.centers;
        }
        set(&mut d.search.max_iterations, self.search_iterations);
        set(&mut d.ascent_iterations, self.ascent_iterations);
        set(&mut d.alpha.initial, self.alpha0);
        set(&mut d.search.translation.initial, self.beta0);
        set(&mut d.search.rotation.initial, self.gamma0);
        if let Some(decay) = self.decay {
            d.alpha.decay = decay;
            d.search.translation.decay = decay;
            d.search.rotation.decay = decay;
        }
        set(&mut d.kde_bandwidth, self.bandwidth);
        set(&mut d.seed, self.seed);
        if threads.is_some() {
            d.threads = threads;
        }
        run.validate()?;
        Ok(run)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Weight file for the learned backend.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Per-frame JSON stats (defaults to <out>/stats.json).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct EvalArgs {
    /// Denoised cloud (omit when using --manifest).
    denoised: Option<PathBuf>,
    /// Clean reference cloud.
    clean: Option<PathBuf>,
    /// Reference mesh for point-to-mesh distance.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Evaluate every frame of a manifest against its clean references.
    #[arg(long, conflicts_with_all = ["denoised", "clean"])]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    /// Normalize both clouds with the reference's fit.
    #[arg(long)]
    shared_fit: bool,
    /// Chamfer distance on squared distances.
    #[arg(long)]
    squared: bool,
    /// Skip unit-sphere normalization.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrespondArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Frame the patch is taken from.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Frame searched in (defaults to frame + 1).
    #[arg(long)]
    target: Option<usize>,
    /// Index of the patch center point.
    #[arg(long, default_value_t = 0)]
    center: usize,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// CSV trace of the search iterations.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Seeds per cell; seed `s` samples the scene with `s` and the noise with `s + 1000`.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.03")]
    sigmas: Vec<f64>,
    #[arg(
        long = "fusions",
        value_enum,
        value_delimiter = ',',
        default_value = "gradient,mean,none"
    )]
    fusions: Vec<FusionArg>,
    #[arg(long = "corrs", value_enum, value_delimiter = ',', default_value = "gradient,icp")]
    corrs: Vec<CorrArg>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    shared_fit: bool,
    /// CSV output (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|e| format!("'{p}': {e}"))?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config { .. } | Error::InvalidArgument(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(Error::config("threads", "must be >= 1"));
    }
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Noise(a) => noise(a),
        Command::TrainField(a) => train(a),
        Command::Denoise(a) => denoise(a, cli.threads),
        Command::Eval(a) => eval(a),
        Command::Correspond(a) => correspond(a, cli.threads),
        Command::Bench(a) => bench(a, cli.threads),
    }
}

fn frame_name(prefix: &str, t: usize) -> String {
    format!("{prefix}_{t:03}.ply")
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = a.scene.spec(a.seed);
    let generated = generate_sequence(&spec)?;
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for (t, frame) in generated.clean.frames.iter().enumerate() {
        let name = frame_name("clean", t);
        write_cloud(frame, &a.out.join(&name), CloudFormat::PlyAscii)?;
        let mesh = match &generated.meshes {
            Some(meshes) => {
                let mesh_name = frame_name("mesh", t);
                write_mesh(&meshes[t], &a.out.join(&mesh_name))?;
                Some(mesh_name)
            }
            None => None,
        };
        entries.push(FrameEntry {
            path: name.clone(),
            format: CloudFormat::PlyAscii,
            clean: Some(name),
            mesh,
        });
    }
    let transforms: Vec<TransformRecord> = generated.transforms.iter().map(TransformRecord::from).collect();
    let steps: Vec<TransformRecord> = (0..spec.frames.saturating_sub(1))
        .map(|t| TransformRecord::from(&generated.step_transform(t)))
        .collect();
    let gt = serde_json::json!({ "scene": spec, "frame_transforms": transforms, "step_transforms": steps });
    fs::write(a.out.join("transforms.json"), serde_json::to_string_pretty(&gt)? + "\n")?;
    let mut manifest = SequenceManifest::new(format!("{:?}", spec.shape).to_lowercase(), entries);
    manifest.notes = Some(format!("synthetic, seed {}", spec.seed));
    manifest.save(&a.out.join("manifest.json"))?;
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let pb = PathBuf::from(p);
    if pb.is_absolute() {
        pb
    } else {
        base.join(pb)
    }
}

fn noise(a: NoiseArgs) -> Result<()> {
    let mut run = RunConfig::layered(Profile::Standard, a.config.as_deref())?;
    set(&mut run.noise.sigma, a.sigma);
    if a.sigma_max.is_some() {
        run.noise.sigma_max = a.sigma_max;
    }
    set(&mut run.noise.seed, a.seed);
    run.noise.validate()?;

    let manifest = SequenceManifest::load(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let loaded = manifest.load_frames(&base)?;
    let reference = loaded.clean.clone().unwrap_or_else(|| loaded.noisy.clone());
    let (noisy, sigmas) = corrupt_sequence(&loaded.noisy, &run.noise)?;

    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for (t, frame) in noisy.frames.iter().enumerate() {
        let name = frame_name("noisy", t);
        write_cloud(frame, &a.out.join(&name), CloudFormat::PlyAscii)?;
        let clean_name = frame_name("clean", t);
        write_cloud(&reference.frames[t], &a.out.join(&clean_name), CloudFormat::PlyAscii)?;
        let mesh = match &manifest.frames[t].mesh {
            Some(m) => {
                let mesh_name = frame_name("mesh", t);
                let mesh = read_mesh(&resolve(&base, m))?;
                write_mesh(&mesh, &a.out.join(&mesh_name))?;
                Some(mesh_name)
            }
            None => None,
        };
        entries.push(FrameEntry {
            path: name,
            format: CloudFormat::PlyAscii,
            clean: Some(clean_name),
            mesh,
        });
    }
    let mut out = SequenceManifest::new(format!("{}-noisy", manifest.name), entries);
    let levels: Vec<String> = sigmas.iter().map(|s| format!("{s:.6}")).collect();
    out.notes = Some(format!(
        "gaussian sigma per frame: {}; seed {}",
        levels.join(" "),
        run.noise.seed
    ));
    out.save(&a.out.join("manifest.json"))?;
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut run = RunConfig::layered(Profile::Standard, a.config.as_deref())?;
    let c = &mut run.training;
    set(&mut c.epochs, a.epochs);
    set(&mut c.learning_rate, a.lr);
    set(&mut c.batch_size, a.batch);
    set(&mut c.samples_per_point, a.samples);
    if a.radius.is_some() {
        c.sample_radius = a.radius;
    }
    set(&mut c.k_ensemble, a.k);
    set(&mut c.k_feat, a.k_feat);
    set(&mut c.seed, a.seed);
    c.validate()?;

    let manifest = SequenceManifest::load(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let entry = manifest.frames.get(a.frame).ok_or_else(|| {
        Error::config(
            "frame",
            format!("{} out of range for {} frames", a.frame, manifest.frames.len()),
        )
    })?;
    let clean_ref = entry
        .clean
        .as_ref()
        .ok_or_else(|| Error::config("manifest", "training needs a clean reference for the frame"))?;
    let frame_path = resolve(&base, &entry.path);
    let frame = read_cloud(&frame_path, entry.format)?;
    let clean_path = resolve(&base, clean_ref);
    let clean = read_cloud(&clean_path, CloudFormat::from_path(&clean_path)?)?;

    let (field, report) = train_field(&frame, &clean, &run.training)?;
    let anchor_path = fs::canonicalize(&frame_path)?;
    field.save(&a.out, Some(AnchorRef::for_file(&anchor_path)?))?;
    let summary = serde_json::json!({
        "initial_loss": report.initial_loss(),
        "final_loss": report.final_loss(),
        "epoch_losses": report.epoch_losses,
        "training": run.training,
    });
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match &a.report {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_learned(weights: Option<&Path>, kind: FieldKind) -> Result<Option<LearnedField>> {
    match (kind, weights) {
        (FieldKind::Learned, Some(w)) => Ok(Some(LearnedField::load(w)?)),
        (FieldKind::Learned, None) => Err(Error::config("weights", "the learned field needs --weights")),
        _ => Ok(None),
    }
}

fn denoise(a: DenoiseArgs, threads: Option<usize>) -> Result<()> {
    let run = a.pipeline.resolve(Profile::Standard, threads)?;
    let config = run.denoise;
    let manifest = SequenceManifest::load(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let loaded = manifest.load_frames(&base)?;
    config.validate_for(&loaded.noisy)?;
    let learned = load_learned(a.weights.as_deref(), config.field)?;

    let fields = build_fields(&loaded.noisy, loaded.clean.as_ref(), learned.as_ref(), &config)?;
    let mut outputs = denoise_sequence(&loaded.noisy, &fields, &config)?;

    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for (t, out) in outputs.iter_mut().enumerate() {
        let name = frame_name("denoised", t);
        write_cloud(&out.cloud, &a.out.join(&name), CloudFormat::PlyAscii)?;
        let src = &manifest.frames[t];
        let absolute = |p: &Option<String>| -> Result<Option<String>> {
            p.as_ref()
                .map(|p| Ok(fs::canonicalize(resolve(&base, p))?.to_string_lossy().into_owned()))
                .transpose()
        };
        if let Some(clean) = &loaded.clean {
            out.stats.cd = Some(evaluate_frame(t, &out.cloud, &clean.frames[t], None, MetricOptions::default())?.cd);
        }
        entries.push(FrameEntry {
            path: name,
            format: CloudFormat::PlyAscii,
            clean: absolute(&src.clean)?,
            mesh: absolute(&src.mesh)?,
        });
    }
    let mut out_manifest = SequenceManifest::new(format!("{}-denoised", manifest.name), entries);
    out_manifest.notes = Some(format!(
        "field {:?}, fusion {}, corr {:?}, seed {}",
        config.field, config.fusion, config.correspondence, config.seed
    ));
    out_manifest.save(&a.out.join("manifest.json"))?;

    let stats: Vec<_> = outputs.iter().map(|o| &o.stats).collect();
    let stats_path = a.stats.unwrap_or_else(|| a.out.join("stats.json"));
    fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")?;
    for s in &stats {
        log::info!(
            "frame {}: {} patches, {} searches ({} converged), cd {:?}",
            s.frame,
            s.patches,
            s.searches,
            s.converged,
            s.cd
        );
    }
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let options = MetricOptions {
        shared_fit: a.shared_fit,
        squared_cd: a.squared,
        raw: a.raw,
    };
    let frames = if let Some(m) = &a.manifest {
        let manifest = SequenceManifest::load(m)?;
        let loaded = manifest.load_frames(&manifest_dir(m))?;
        let clean = loaded
            .clean
            .ok_or_else(|| Error::config("manifest", "evaluation needs clean references"))?;
        loaded
            .noisy
            .frames
            .iter()
            .enumerate()
            .map(|(t, d)| evaluate_frame(t, d, &clean.frames[t], loaded.meshes.as_ref().map(|m| &m[t]), options))
            .collect::<Result<Vec<_>>>()?
    } else {
        let (Some(d), Some(c)) = (&a.denoised, &a.clean) else {
            return Err(Error::config("eval", "give DENOISED and CLEAN files or --manifest"));
        };
        let denoised = read_cloud(d, CloudFormat::from_path(d)?)?;
        let clean = read_cloud(c, CloudFormat::from_path(c)?)?;
        let mesh = a.mesh.as_deref().map(read_mesh).transpose()?;
        vec![evaluate_frame(0, &denoised, &clean, mesh.as_ref(), options)?]
    };
    let report = MetricReport::new(frames, options);
    let text = match a.format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn correspond(a: CorrespondArgs, threads: Option<usize>) -> Result<()> {
    let run = a.pipeline.resolve(Profile::Standard, threads)?;
    let config = run.denoise;
    let manifest = SequenceManifest::load(&a.manifest)?;
    let loaded = manifest.load_frames(&manifest_dir(&a.manifest))?;
    let n = loaded.noisy.len();
    let target = a.target.unwrap_or(a.frame + 1);
    if a.frame >= n || target >= n {
        return Err(Error::config(
            "frame",
            format!("frames {} and {target} must be below {n}", a.frame),
        ));
    }
    let frame: &PointCloud = &loaded.noisy.frames[a.frame];
    let layout = config.layout(frame.len())?;
    let index = NeighborIndex::new(frame)?;
    let patch = extract_patch(frame, &index, a.center, layout.patch_size, a.frame)?;
    let tolerance = config.search.tolerance * loaded.noisy.frames[target].bounding_radius()?;

    let result = match config.correspondence {
        CorrespondenceBackend::Icp => icp_correspondence(
            &patch,
            &loaded.noisy.frames[target],
            config.search.max_iterations,
            tolerance * tolerance,
        )?,
        CorrespondenceBackend::Gradient => {
            let learned = load_learned(a.weights.as_deref(), config.field)?;
            let fields: Vec<SharedField> =
                build_fields(&loaded.noisy, loaded.clean.as_ref(), learned.as_ref(), &config)?;
            let search = SearchConfig {
                tolerance,
                ..config.search
            };
            search_correspondence(&patch, fields[target].as_ref(), &search)?
        }
    };
    if let Some(p) = &a.trace {
        fs::write(p, result.trace_csv())?;
    }
    let summary = serde_json::json!({
        "frame": a.frame,
        "target": target,
        "center": a.center,
        "patch_size": patch.len(),
        "transform": TransformRecord::from(&result.transform),
        "rotation_angle_deg": result.transform.angle().to_degrees(),
        "residual": result.residual,
        "initial_residual": result.initial_residual,
        "tolerance": tolerance,
        "iterations": result.iterations,
        "converged": result.converged,
        "warnings": result.warnings,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn bench(a: BenchArgs, threads: Option<usize>) -> Result<()> {
    let run = a.pipeline.resolve(Profile::Desk, threads)?;
    if a.seeds == 0 {
        return Err(Error::config("seeds", "must be >= 1"));
    }
    if a.sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::config("sigmas", "must be >= 0"));
    }
    let grid = BenchGrid {
        scene: a.scene.spec(0),
        sigmas: a.sigmas.clone(),
        fusions: a.fusions.iter().map(|&f| f.into()).collect(),
        correspondences: a.corrs.iter().map(|&c| c.into()).collect(),
        seeds: (0..a.seeds).collect(),
        config: run.denoise,
        options: MetricOptions {
            shared_fit: a.shared_fit,
            ..MetricOptions::default()
        },
    };
    grid.scene.validate()?;
    let rows = run_grid(&grid, |row| log::info!("{}", row.csv_line()))?;
    let csv = rows_to_csv(&rows);
    debug_assert!(csv.starts_with(BENCH_CSV_HEADER));
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
