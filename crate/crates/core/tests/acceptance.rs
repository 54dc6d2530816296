//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use driftfield::bench::{run_case, BenchInput, BenchRun};
use driftfield::correspondence::{search_correspondence, SearchConfig, StepSchedule};
use driftfield::denoiser::{build_fields, denoise_sequence, CorrespondenceBackend, DenoiseConfig, FieldKind};
use driftfield::field::{
    field_loss, train_field, FieldNetwork, FnField, GradientField, KdeField, OracleField, TrainingConfig, TrainingSet,
};
use driftfield::fusion::{inverse_transform_field, FusionMode};
use driftfield::geometry::{
    extract_patch, pairwise_mean, FrameSequence, Mat3, NeighborIndex, Patch, Point3, PointCloud, RigidTransform, Vec3,
};
use driftfield::metrics::{
    chamfer, hausdorff, point_to_mesh, point_to_mesh_distances, point_to_triangle, MetricOptions, TriangleMesh,
};
use driftfield::noise::{add_gaussian, corrupt_sequence, sample_shape, NoiseSpec, SceneSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

/// Worst rigidity and orthonormality figures over every search observed.
#[derive(Default)]
struct RigidityLog {
    searches: usize,
    distortion: f64,
    orthonormal: f64,
}

static RIGIDITY: Mutex<RigidityLog> = Mutex::new(RigidityLog {
    searches: 0,
    distortion: 0.0,
    orthonormal: 0.0,
});

fn record_search(distortion: f64, orthonormal: f64) {
    let mut log = RIGIDITY.lock().unwrap();
    log.searches += 1;
    log.distortion = log.distortion.max(distortion);
    log.orthonormal = if orthonormal.is_nan() {
        f64::NAN
    } else {
        log.orthonormal.max(orthonormal)
    };
}

fn record_runs(runs: &[BenchRun]) {
    for run in runs {
        for frame in &run.outputs {
            for patch in &frame.patches {
                for s in &patch.searches {
                    record_search(s.rigidity_error, s.transform.orthonormal_deviation());
                }
            }
        }
    }
}

fn pairwise_distortion(a: &[Point3], b: &[Point3]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            worst = worst.max(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs());
        }
    }
    worst
}

fn gaussian_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ) * scale
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = gaussian_vec(rng, 1.0);
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

// 1
fn oracle_exactness() -> Outcome {
    let shapes = [Shape::Plane, Shape::Sphere, Shape::Torus, Shape::TwoBox];
    let mut checked = 0usize;
    for fixture in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + fixture);
        let shape = shapes[fixture as usize % shapes.len()];
        let frames = rng.gen_range(1..=3);
        let clean: Vec<PointCloud> = (0..frames)
            .map(|_| sample_shape(shape, rng.gen_range(150..500), &mut rng).unwrap())
            .collect();
        let clean = FrameSequence::new(clean).unwrap();
        let sigma = rng.gen_range(0.005..0.04);
        let (noisy, _) = corrupt_sequence(&clean, &NoiseSpec::gaussian(sigma, fixture)).unwrap();
        let config = DenoiseConfig {
            patch_size: rng.gen_range(40..120),
            ascent_iterations: 1,
            alpha: StepSchedule::new(1.0, 1.0),
            field: FieldKind::Oracle,
            fusion: FusionMode::None,
            seed: fixture,
            ..DenoiseConfig::default()
        };
        let fields = build_fields(&noisy, Some(&clean), None, &config).map_err(|e| e.to_string())?;
        let out = denoise_sequence(&noisy, &fields, &config).map_err(|e| e.to_string())?;
        for (t, frame) in out.iter().enumerate() {
            let members: HashSet<[u64; 3]> = clean.frames[t]
                .points
                .iter()
                .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
                .collect();
            if frame.cloud.len() != noisy.frames[t].len() {
                return Err(format!("fixture {fixture} frame {t}: cardinality changed"));
            }
            for p in &frame.cloud.points {
                if !members.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]) {
                    return Err(format!("fixture {fixture} frame {t}: {p:?} is not a clean point"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("20 fixtures, {checked} points all in the clean set"))
}

// 2
fn field_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clean = sample_shape(Shape::Sphere, 500, &mut rng).unwrap();
    let cloud = add_gaussian(&clean, &NoiseSpec::gaussian(0.02, 3)).unwrap();
    let kde = KdeField::new(&cloud, 0.15).unwrap();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = cloud.points[rng.gen_range(0..cloud.len())] + gaussian_vec(&mut rng, 0.1);
        let g = kde.eval(&q);
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = step;
            let fd = (kde.log_density(&(q + e)) - kde.log_density(&(q - e))) / (2.0 * step);
            worst = worst.max((g[axis] - fd).abs());
        }
    }
    if worst <= 1e-6 {
        Ok(format!("max |eval - finite difference| = {worst:.2e} over 100 queries"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-6"))
    }
}

// 3
fn training_sanity() -> Outcome {
    let plane = |n: usize, seed: u64| {
        let clean = sample_shape(Shape::Plane, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let noisy = add_gaussian(&clean, &NoiseSpec::gaussian(0.02, seed + 1)).unwrap();
        (noisy, clean)
    };

    let (noisy, clean) = plane(200, 11);
    let config = TrainingConfig {
        epochs: 50,
        ..TrainingConfig::default()
    };
    let (field, report) = train_field(&noisy, &clean, &config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let before = field_loss(&noisy, &clean, &FieldNetwork::random(config.k_feat, &mut rng), &config).unwrap();
    let after = field_loss(&noisy, &clean, field.network(), &config).unwrap();
    if !(after < 0.5 * before) {
        return Err(format!("loss {before:.4e} -> {after:.4e}, ratio {:.3}", after / before));
    }

    let (noisy, clean) = plane(10, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let network = FieldNetwork::random(4, &mut rng);
    let set = TrainingSet::new(&noisy, &clean, 4, 6, 2.0 * noisy.mean_spacing().unwrap(), &mut rng).unwrap();
    let all: Vec<usize> = (0..set.len()).collect();
    let analytic = set.loss_and_gradient(&network, &all).1.flat_parameters();
    let base = network.flat_parameters();
    let mut probe = network.clone();
    let mut worst = 0.0f64;
    for (i, &g) in analytic.iter().enumerate() {
        let h = 1e-6 * base[i].abs().max(1.0);
        let mut p = base.clone();
        p[i] += h;
        probe.set_flat_parameters(&p);
        let up = set.loss(&probe);
        p[i] = base[i] - h;
        probe.set_flat_parameters(&p);
        let numeric = (up - set.loss(&probe)) / (2.0 * h);
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6));
    }
    if worst > 1e-4 {
        return Err(format!("gradient check: worst relative error {worst:.2e}"));
    }
    Ok(format!(
        "loss {before:.4e} -> {after:.4e} ({:.3}x, {} epochs); {} weight gradients within {worst:.1e} relative",
        after / before,
        report.epoch_losses.len() - 1,
        analytic.len()
    ))
}

fn surface_patch(planar: bool, rng: &mut ChaCha8Rng) -> (PointCloud, Patch) {
    let cloud = if planar {
        sample_shape(Shape::Plane, 1500, rng).unwrap()
    } else {
        sample_shape(Shape::Sphere, 2000, rng).unwrap()
    };
    let index = NeighborIndex::new(&cloud).unwrap();
    let center = index.nearest(&Point3::zeros());
    let center = if planar { center } else { rng.gen_range(0..cloud.len()) };
    let patch = extract_patch(&cloud, &index, center, 100, 0).unwrap();
    (cloud, patch)
}

// 4
fn correspondence_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut recovered = 0;
    let mut converged = 0;
    let mut worst_rot = 0.0f64;
    let mut worst_trans = 0.0f64;
    for trial in 0..50 {
        let planar = trial % 2 == 1;
        let (_, patch) = surface_patch(planar, &mut rng);
        let extent = patch
            .points
            .iter()
            .map(|p| (p - patch.center).norm())
            .fold(0.0, f64::max)
            * 2.0;
        let angle = rng.gen_range(0.0..15f64.to_radians());
        let motion = RigidTransform {
            translation: unit_vector(&mut rng) * rng.gen_range(0.0..0.1 * extent),
            ..RigidTransform::rotation_about(&(unit_vector(&mut rng) * angle), patch.center)
        };
        let target = PointCloud::new(patch.apply_transform(&motion).points).unwrap();
        let oracle = OracleField::new(&target).unwrap();
        let config = SearchConfig {
            translation: StepSchedule::new(1.0, 0.95),
            rotation: StepSchedule::new(1.0, 0.95),
            ..SearchConfig::default()
        }
        .with_frame_radius(target.bounding_radius().unwrap());
        let result = search_correspondence(&patch, &oracle, &config).map_err(|e| e.to_string())?;
        record_search(
            pairwise_distortion(&patch.points, &result.patch.points),
            result.transform.orthonormal_deviation(),
        );

        let (r_got, _) = result.transform.canonical();
        let (r_true, _) = motion.canonical();
        let rot_err = (((r_got * r_true.transpose()).trace() - 1.0) * 0.5)
            .clamp(-1.0, 1.0)
            .acos();
        let trans_err = (result.transform.apply(&patch.center) - motion.apply(&patch.center)).norm() / extent;
        worst_rot = worst_rot.max(rot_err);
        worst_trans = worst_trans.max(trans_err);
        if rot_err < 5f64.to_radians() && trans_err < 0.05 {
            recovered += 1;
        }
        if result.converged {
            converged += 1;
            let mean = result
                .patch
                .points
                .iter()
                .fold(Vec3::zeros(), |acc, p| acc + oracle.eval(p))
                / result.patch.len() as f64;
            if mean.norm() > config.tolerance {
                return Err(format!(
                    "trial {trial}: converged with |mean G| = {:.3e} > eps",
                    mean.norm()
                ));
            }
        }
    }
    let detail = format!(
        "{recovered}/50 recovered, {converged} converged, worst rotation {:.2} deg, worst translation {:.3} extent",
        worst_rot.to_degrees(),
        worst_trans
    );
    if recovered >= 45 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 5
fn magnitude_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let transform = RigidTransform {
            translation: gaussian_vec(&mut rng, 2.0),
            ..RigidTransform::rotation_about(
                &(unit_vector(&mut rng) * rng.gen_range(0.0..std::f64::consts::PI)),
                gaussian_vec(&mut rng, 1.0),
            )
        };
        let query = gaussian_vec(&mut rng, 1.5);
        let (lhs, rhs) = if i % 2 == 0 {
            let a = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let b = gaussian_vec(&mut rng, 1.0);
            let field = FnField(move |x: &Point3| a * x + b);
            (
                inverse_transform_field(&field, transform).eval(&query).norm(),
                field.eval(&transform.apply(&query)).norm(),
            )
        } else {
            let pts: Vec<Point3> = (0..30).map(|_| gaussian_vec(&mut rng, 1.0)).collect();
            let field = KdeField::new(&PointCloud::new(pts).unwrap(), rng.gen_range(0.2..1.0)).unwrap();
            (
                inverse_transform_field(&field, transform).eval(&query).norm(),
                field.eval(&transform.apply(&query)).norm(),
            )
        };
        worst = worst.max((lhs - rhs).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max | |G'(x)| - |G(T x)| | = {worst:.2e} over 1000 triples"))
    } else {
        Err(format!("max deviation {worst:.2e} > 1e-12"))
    }
}

// 6
fn rigidity() -> Outcome {
    let log = RIGIDITY.lock().unwrap();
    let detail = format!(
        "{} searches, max distance change {:.2e}, max orthonormal deviation {:.2e}",
        log.searches, log.distortion, log.orthonormal
    );
    if log.searches > 0 && log.distortion <= 1e-9 && log.orthonormal <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const SEEDS: u64 = 10;

fn benchmark_runs(
    sigma: f64,
    fusion: FusionMode,
    correspondence: CorrespondenceBackend,
) -> Result<Vec<BenchRun>, String> {
    let config = DenoiseConfig {
        fusion,
        correspondence,
        ..DenoiseConfig::desk()
    };
    let runs: Vec<BenchRun> = (0..SEEDS)
        .map(|seed| {
            let input = BenchInput::new(&SceneSpec::bouncing_sphere(2000, 5, seed), sigma, seed + 1000)?;
            run_case(&input, &config, MetricOptions::default())
        })
        .collect::<driftfield::Result<_>>()
        .map_err(|e| e.to_string())?;
    record_runs(&runs);
    Ok(runs)
}

fn mean_cd(runs: &[BenchRun]) -> f64 {
    runs.iter().map(|r| r.score.cd).sum::<f64>() / runs.len() as f64
}

// 7
fn denoising_benefit(at_three: &mut Option<Vec<BenchRun>>) -> Outcome {
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for sigma in [0.01, 0.02, 0.03] {
        let runs = benchmark_runs(sigma, FusionMode::Gradient, CorrespondenceBackend::Gradient)?;
        let worse: Vec<usize> = (0..runs.len())
            .filter(|&i| !(runs[i].score.cd < runs[i].noisy_score.cd))
            .collect();
        let noisy = runs.iter().map(|r| r.noisy_score.cd).sum::<f64>() / runs.len() as f64;
        parts.push(format!(
            "{:.0}%: {:.3} -> {:.3}",
            sigma * 100.0,
            noisy * 1e2,
            mean_cd(&runs) * 1e2
        ));
        if !worse.is_empty() {
            failures.push(format!("sigma {sigma}: seeds {worse:?} not improved"));
        }
        if sigma == 0.03 {
            *at_three = Some(runs);
        }
    }
    let detail = format!("mean CD x1e2 {}", parts.join(", "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

// 8
fn ablation_direction(gradient: Option<Vec<BenchRun>>) -> Outcome {
    let gradient = match gradient {
        Some(r) => r,
        None => benchmark_runs(0.03, FusionMode::Gradient, CorrespondenceBackend::Gradient)?,
    };
    let none = benchmark_runs(0.03, FusionMode::None, CorrespondenceBackend::Gradient)?;
    let icp = benchmark_runs(0.03, FusionMode::Gradient, CorrespondenceBackend::Icp)?;
    let mean = benchmark_runs(0.03, FusionMode::Mean, CorrespondenceBackend::Gradient)?;
    let (g, n, i, m) = (mean_cd(&gradient), mean_cd(&none), mean_cd(&icp), mean_cd(&mean));
    let detail = format!(
        "mean CD x1e2: gradient {:.4}, no-temporal {:.4}, icp {:.4}, mean-fusion {:.4}",
        g * 1e2,
        n * 1e2,
        i * 1e2,
        m * 1e2
    );
    if g <= 1.01 * n && g <= 1.01 * i {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn brute_nearest(a: &PointCloud, b: &PointCloud) -> Vec<f64> {
    a.points
        .iter()
        .map(|p| {
            b.points
                .iter()
                .map(|q| (q - p).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

// 9
fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for pair in 0..200 {
        let cloud = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(1..=256);
            let lattice = pair % 4 == 0;
            let pts = (0..n)
                .map(|_| {
                    if lattice {
                        Point3::new(
                            rng.gen_range(-4..=4) as f64,
                            rng.gen_range(-4..=4) as f64,
                            rng.gen_range(-2..=2) as f64,
                        )
                    } else {
                        gaussian_vec(rng, 1.0)
                    }
                })
                .collect();
            PointCloud::new(pts).unwrap()
        };
        let (a, b) = (cloud(&mut rng), cloud(&mut rng));
        let ab = brute_nearest(&a, &b);
        let ba = brute_nearest(&b, &a);
        let cd = 0.5 * (pairwise_mean(&ab) + pairwise_mean(&ba));
        let hd = ab.iter().copied().fold(0.0, f64::max);
        let (got_cd, got_hd) = (chamfer(&a, &b).unwrap(), hausdorff(&a, &b).unwrap());
        if got_cd != cd || got_hd != hd {
            return Err(format!(
                "pair {pair}: chamfer {got_cd:e} vs {cd:e}, hausdorff {got_hd:e} vs {hd:e}"
            ));
        }
    }
    for case in 0..200 {
        let nv = rng.gen_range(3..40);
        let vertices: Vec<Point3> = (0..nv).map(|_| gaussian_vec(&mut rng, 1.0)).collect();
        let faces: Vec<[usize; 3]> = (0..rng.gen_range(1..=50))
            .map(|_| [rng.gen_range(0..nv), rng.gen_range(0..nv), rng.gen_range(0..nv)])
            .collect();
        let mesh = TriangleMesh::new(vertices, faces).unwrap();
        if mesh.faces.is_empty() {
            continue;
        }
        let queries = PointCloud::new((0..64).map(|_| gaussian_vec(&mut rng, 1.5)).collect()).unwrap();
        let brute: Vec<f64> = queries
            .points
            .iter()
            .map(|q| {
                (0..mesh.faces.len())
                    .map(|f| point_to_triangle(q, &mesh.triangle(f)).unwrap())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let fast = point_to_mesh_distances(&queries, &mesh).unwrap();
        if fast != brute || point_to_mesh(&queries, &mesh).unwrap() != pairwise_mean(&brute) {
            return Err(format!("mesh {case}: point-to-mesh differs from the face loop"));
        }
    }
    Ok("200 cloud pairs and 200 meshes equal brute force bit for bit".into())
}

// 10
fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_driftfield");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |name: &str| dir.path().join(name);
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin)
            .args(args)
            .env_remove("DRIFTFIELD_THREADS")
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run(&[
        "generate",
        "--points",
        "2000",
        "--frames",
        "3",
        "--seed",
        "7",
        "--out",
        &s(&path("gen")),
    ])?;
    run(&[
        "noise",
        "--manifest",
        &s(&path("gen/manifest.json")),
        "--sigma",
        "0.02",
        "--seed",
        "8",
        "--out",
        &s(&path("noisy")),
    ])?;
    let manifest = s(&path("noisy/manifest.json"));
    let variants = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, threads) in variants {
        run(&[
            "--threads",
            threads,
            "denoise",
            "--manifest",
            &manifest,
            "--out",
            &s(&path(name)),
            "--seed",
            "3",
        ])?;
    }
    let mut bytes = 0;
    for t in 0..3 {
        let file = format!("denoised_{t:03}.ply");
        let reference = std::fs::read(path("a").join(&file)).map_err(|e| e.to_string())?;
        for (name, threads) in &variants[1..] {
            let other = std::fs::read(path(name).join(&file)).map_err(|e| e.to_string())?;
            if other != reference {
                return Err(format!("{file} differs for run {name} (--threads {threads})"));
            }
        }
        bytes += reference.len();
    }
    Ok(format!(
        "3 runs (threads 1, 1, 4) wrote identical PLY files ({bytes} bytes per run)"
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, bool)> = Vec::new();
    let mut check = |id: u32, name: &'static str, limit: Duration, outcome: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = outcome();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.is_ok() && in_time;
        let detail = match &result {
            Ok(d) | Err(d) => d.clone(),
        };
        println!(
            "criterion {id:>2} {name}: {} | {detail} | {:.1} s (limit {} s){}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { " over time" }
        );
        results.push((id, name, pass));
    };

    let secs = Duration::from_secs;
    let mut shared = None;
    check(1, "oracle exactness", secs(5), &mut oracle_exactness);
    check(2, "field correctness", secs(10), &mut field_correctness);
    check(3, "training sanity", secs(60), &mut training_sanity);
    check(4, "correspondence recovery", secs(60), &mut correspondence_recovery);
    check(5, "magnitude preservation", secs(5), &mut magnitude_preservation);
    check(7, "denoising benefit", secs(300), &mut || {
        denoising_benefit(&mut shared)
    });
    check(8, "ablation direction", secs(900), &mut || {
        ablation_direction(shared.take())
    });
    check(9, "metric oracles", secs(30), &mut metric_oracles);
    check(10, "determinism", secs(120), &mut determinism);
    check(6, "rigidity and orthonormality", secs(1), &mut rigidity);

    let passed = results.iter().filter(|r| r.2).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
