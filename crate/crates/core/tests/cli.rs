use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_driftfield");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DRIFTFIELD_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noisy_sequence(dir: &Path) -> std::path::PathBuf {
    let (gen, noisy) = (dir.join("gen"), dir.join("noisy"));
    ok(&[
        "generate",
        "--points",
        "300",
        "--frames",
        "3",
        "--seed",
        "4",
        "--out",
        s(&gen),
    ]);
    ok(&[
        "noise",
        "--manifest",
        s(&gen.join("manifest.json")),
        "--sigma",
        "0.02",
        "--seed",
        "1",
        "--out",
        s(&noisy),
    ]);
    noisy.join("manifest.json")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    for sub in [
        "generate",
        "noise",
        "train-field",
        "denoise",
        "eval",
        "correspond",
        "bench",
    ] {
        assert_eq!(run(&[sub, "--help"]).status.code(), Some(0), "{sub}");
    }
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["denoise", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_clouds_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--points", "200", "--frames", "1", "--out", s(&gen)]);
    let cloud = gen.join("clean_000.ply");
    let out = ok(&["eval", s(&cloud), s(&cloud)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mean_cd"].as_f64(), Some(0.0));
    assert_eq!(report["mean_hd"].as_f64(), Some(0.0));
}

#[test]
fn denoise_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = noisy_sequence(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("den{threads}"));
        ok(&[
            "--threads",
            threads,
            "denoise",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out),
            "--m",
            "60",
            "--Hp",
            "5",
            "--H",
            "5",
        ]);
        outputs.push(out);
    }
    for t in 0..3 {
        let name = format!("denoised_{t:03}.ply");
        let a = std::fs::read(outputs[0].join(&name)).unwrap();
        let b = std::fs::read(outputs[1].join(&name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
    let eval = ok(&[
        "eval",
        "--manifest",
        s(&outputs[0].join("manifest.json")),
        "--format",
        "csv",
    ]);
    let csv = String::from_utf8(eval.stdout).unwrap();
    let frames: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .collect();
    assert!(csv.starts_with("frame,cd,"));
    assert_eq!(frames.len(), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = noisy_sequence(dir.path());
    let out = dir.path().join("den");
    let thin = run(&[
        "denoise",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--m",
        "10",
        "--M",
        "2",
    ]);
    assert_eq!(thin.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&thin.stderr).contains("cover"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"denoise": {"patch_sise": 10}}"#).unwrap();
    let unknown = run(&[
        "denoise",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--config",
        s(&bad),
    ]);
    assert_eq!(unknown.status.code(), Some(2));

    let missing = run(&[
        "denoise",
        "--manifest",
        s(&dir.path().join("nope.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bench_writes_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    ok(&[
        "bench",
        "--points",
        "200",
        "--frames",
        "2",
        "--seeds",
        "1",
        "--sigmas",
        "0.02",
        "--fusions",
        "gradient,none",
        "--corrs",
        "gradient",
        "--m",
        "50",
        "--Hp",
        "3",
        "--H",
        "5",
        "--out",
        s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, driftfield::bench::BENCH_CSV_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split(',').count(), header.split(',').count());
    }
}

#[test]
fn correspond_prints_transform_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = noisy_sequence(dir.path());
    let trace = dir.path().join("trace.csv");
    let out = ok(&[
        "correspond",
        "--manifest",
        s(&manifest),
        "--center",
        "7",
        "--m",
        "40",
        "--H",
        "10",
        "--trace",
        s(&trace),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.get("converged").is_some());
    let rows = std::fs::read_to_string(&trace).unwrap();
    assert!(rows.lines().count() >= 2);
}
