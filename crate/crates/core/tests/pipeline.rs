use driftfield::bench::{run_case, BenchInput};
use driftfield::correspondence::{icp_correspondence, search_correspondence, StepSchedule};
use driftfield::denoiser::{build_fields, denoise_sequence, CorrespondenceBackend, DenoiseConfig, FieldKind};
use driftfield::field::{GradientField, KdeField, KdeUnits};
use driftfield::fusion::{fuse_fields, FusionMode};
use driftfield::geometry::{extract_patch, FrameSequence, NeighborIndex, Point3, PointCloud, RigidTransform, Vec3};
use driftfield::metrics::{chamfer, chamfer_one_sided, MetricOptions};
use driftfield::noise::{add_gaussian, corrupt_sequence, sample_shape, NoiseSpec, SceneSpec, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(side: usize, spacing: f64) -> PointCloud {
    let pts = (0..side * side)
        .map(|i| Point3::new((i % side) as f64 * spacing, (i / side) as f64 * spacing, 0.0))
        .collect();
    PointCloud::new(pts).unwrap()
}

fn oracle_config() -> DenoiseConfig {
    DenoiseConfig {
        patch_size: 60,
        ascent_iterations: 1,
        alpha: StepSchedule::new(1.0, 1.0),
        field: FieldKind::Oracle,
        fusion: FusionMode::None,
        ..DenoiseConfig::default()
    }
}

fn run(noisy: &FrameSequence, clean: Option<&FrameSequence>, config: &DenoiseConfig) -> Vec<PointCloud> {
    let fields = build_fields(noisy, clean, None, config).unwrap();
    denoise_sequence(noisy, &fields, config)
        .unwrap()
        .into_iter()
        .map(|o| o.cloud)
        .collect()
}

#[test]
fn oracle_denoising_recovers_noisy_plane() {
    let clean = grid(20, 0.05);
    let noisy = add_gaussian(&clean, &NoiseSpec::gaussian(0.02, 4)).unwrap();
    let clean_seq = FrameSequence::new(vec![clean.clone()]).unwrap();
    let out = run(
        &FrameSequence::new(vec![noisy]).unwrap(),
        Some(&clean_seq),
        &oracle_config(),
    );
    assert_eq!(out[0].len(), clean.len());
    assert!(chamfer_one_sided(&out[0], &clean).unwrap() <= 1e-6);
    assert!(out[0].points.iter().all(|p| p.z.abs() <= 1e-6));
}

#[test]
fn clean_input_is_a_fixed_point_of_the_oracle() {
    let clean = sample_shape(Shape::Sphere, 500, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let seq = FrameSequence::new(vec![clean.clone(), clean.clone()]).unwrap();
    let config = DenoiseConfig {
        field: FieldKind::Oracle,
        patch_size: 100,
        ..DenoiseConfig::default()
    };
    let out = run(&seq, Some(&seq), &config);
    for frame in out {
        assert!(chamfer(&frame, &clean).unwrap() <= 1e-6);
    }
}

#[test]
fn output_cardinality_matches_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames: Vec<PointCloud> = [300, 340, 280]
        .iter()
        .map(|&n| sample_shape(Shape::Torus, n, &mut rng).unwrap())
        .collect();
    let seq = FrameSequence::new(frames).unwrap();
    let config = DenoiseConfig {
        patch_size: 60,
        ascent_iterations: 5,
        ..DenoiseConfig::desk()
    };
    let out = run(&seq, None, &config);
    for (a, b) in out.iter().zip(&seq.frames) {
        assert_eq!(a.len(), b.len());
    }
}

#[test]
fn static_sequence_fusion_not_worse_than_single_frame() {
    let clean = sample_shape(Shape::Sphere, 1000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let clean_seq = FrameSequence::new(vec![clean.clone(); 3]).unwrap();
    let (noisy, _) = corrupt_sequence(&clean_seq, &NoiseSpec::gaussian(0.02, 9)).unwrap();
    let score = |config: &DenoiseConfig| -> f64 {
        let out = run(&noisy, None, config);
        out.iter().map(|f| chamfer(f, &clean).unwrap()).sum::<f64>() / 3.0
    };
    let fused = score(&DenoiseConfig::desk());
    let single = score(&DenoiseConfig {
        fusion: FusionMode::None,
        ..DenoiseConfig::desk()
    });
    assert!(fused <= 1.05 * single, "fused {fused:e} vs single {single:e}");
}

#[test]
fn single_frame_sequence_matches_frame_without_neighbors() {
    let input = BenchInput::new(&SceneSpec::bouncing_sphere(600, 3, 5), 0.02, 8).unwrap();
    let config = DenoiseConfig {
        patch_size: 100,
        ascent_iterations: 8,
        ..DenoiseConfig::desk()
    };
    let none = run(
        &input.noisy,
        None,
        &DenoiseConfig {
            fusion: FusionMode::None,
            ..config.clone()
        },
    );
    for (frame, expected) in input.noisy.frames.iter().zip(&none) {
        let out = run(&FrameSequence::new(vec![frame.clone()]).unwrap(), None, &config);
        assert_eq!(out[0].points, expected.points);
    }
}

#[test]
fn denoising_is_deterministic_across_thread_counts() {
    let input = BenchInput::new(&SceneSpec::bouncing_sphere(500, 3, 2), 0.02, 3).unwrap();
    let base = DenoiseConfig {
        patch_size: 100,
        ascent_iterations: 8,
        ..DenoiseConfig::desk()
    };
    let a = run_case(
        &input,
        &DenoiseConfig {
            threads: Some(1),
            ..base.clone()
        },
        MetricOptions::default(),
    )
    .unwrap();
    let b = run_case(
        &input,
        &DenoiseConfig {
            threads: Some(4),
            ..base.clone()
        },
        MetricOptions::default(),
    )
    .unwrap();
    let c = run_case(&input, &base, MetricOptions::default()).unwrap();
    assert_eq!(a.denoised, b.denoised);
    assert_eq!(a.denoised, c.denoised);
    assert_eq!(a.score, b.score);
}

#[test]
fn empty_frame_is_rejected() {
    let seq = FrameSequence::new(vec![grid(10, 0.1), PointCloud::new(vec![]).unwrap()]);
    let config = DenoiseConfig::desk();
    let err = match seq {
        Err(e) => e,
        Ok(seq) => match build_fields(&seq, None, None, &config) {
            Err(e) => e,
            Ok(fields) => denoise_sequence(&seq, &fields, &config).unwrap_err(),
        },
    };
    assert!(!err.to_string().is_empty());
}

#[test]
fn icp_backend_runs_end_to_end() {
    let input = BenchInput::new(&SceneSpec::bouncing_sphere(500, 3, 4), 0.02, 5).unwrap();
    let config = DenoiseConfig {
        patch_size: 100,
        ascent_iterations: 8,
        correspondence: CorrespondenceBackend::Icp,
        ..DenoiseConfig::desk()
    };
    let fields = build_fields(&input.noisy, None, None, &config).unwrap();
    let out = denoise_sequence(&input.noisy, &fields, &config).unwrap();
    for frame in &out {
        assert!(frame.stats.searches > 0);
        assert!(frame.stats.max_orthonormal_deviation <= 1e-9);
        assert!(frame.stats.max_rigidity_error <= 1e-9);
    }
}

#[test]
fn static_fusion_is_a_fixed_point() {
    let frame = grid(30, 0.1);
    let kde = KdeField::with_spacing_bandwidth(&frame, 1.5)
        .unwrap()
        .with_units(KdeUnits::Displacement);
    let index = NeighborIndex::new(&frame).unwrap();
    let config = DenoiseConfig::desk()
        .search
        .with_frame_radius(frame.bounding_radius().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    for center in [15 * 30 + 15, 10 * 30 + 12, 18 * 30 + 9] {
        let patch = extract_patch(&frame, &index, center, 45, 0).unwrap();
        let result = search_correspondence(&patch, &kde, &config).unwrap();
        assert!(result.transform.is_identity(1e-6), "{:?}", result.transform);
        let pairs: [(&dyn GradientField, RigidTransform); 2] = [(&kde, result.transform), (&kde, result.transform)];
        let fused = fuse_fields(&kde, &pairs, FusionMode::Gradient).unwrap();
        for _ in 0..34 {
            let p = patch.points[rng.gen_range(0..patch.len())];
            let q = p + Vec3::new(
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.03..0.03),
                rng.gen_range(-0.05..0.05),
            );
            let (own, mixed) = (kde.eval(&q), fused.eval(&q));
            assert!(
                (own - mixed).norm() <= 1e-3 * own.norm().max(1e-12),
                "{own:?} vs {mixed:?}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn icp_recovers_exact_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cloud = sample_shape(Shape::Sphere, 400, &mut rng).unwrap();
    let index = NeighborIndex::new(&cloud).unwrap();
    for trial in 0..10 {
        let patch = extract_patch(&cloud, &index, rng.gen_range(0..400), 40, 0).unwrap();
        let theta = Vec3::new(
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
            rng.gen_range(-0.03..0.03),
        );
        let motion = RigidTransform {
            translation: Vec3::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 0.0),
            ..RigidTransform::rotation_about(&theta, patch.center)
        };
        let target = PointCloud::new(patch.apply_transform(&motion).points).unwrap();
        let result = icp_correspondence(&patch, &target, 100, 1e-20).unwrap();
        for p in &patch.points {
            let err = (result.transform.apply(p) - motion.apply(p)).norm();
            assert!(err <= 1e-6, "trial {trial}: {err:e}");
        }
    }
}
