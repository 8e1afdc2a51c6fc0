//! End-to-end command tests: the exit-code contract (0 success, 1 numerical
//! failure, 2 input error) and the file-level behavior of each subcommand.

use std::path::Path;
use std::process::{Command, Output};

use depthdistill::io_formats::{read_image, read_pfm};

const BIN: &str = env!("CARGO_BIN_EXE_depthdistill");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn assert_code(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_scene(dir: &Path, seed: &str) -> String {
    let scene = dir.join("scene").to_string_lossy().into_owned();
    let out = run(&[
        "synth",
        "--out",
        &scene,
        "--seed",
        seed,
        "--width",
        "64",
        "--height",
        "48",
        "--sparsity",
        "0.3",
    ]);
    assert_code(&out, 0, "synth");
    scene
}

#[test]
fn missing_manifest_exits_2_with_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "distill",
        "--manifest",
        "/nonexistent/manifest.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 2, "missing manifest");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("stderr is JSON");
    assert_eq!(parsed["kind"], "input");
    assert!(parsed["error"].as_str().unwrap().contains("manifest"));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scales": 9}"#).unwrap();
    let out = run(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 2, "bad config");

    std::fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    let out = run(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 2, "unknown config field");
}

#[test]
fn eval_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "3");
    let small = depthdistill::DepthMap::constant(4, 4, 1.0).unwrap();
    let small_path = dir.path().join("small.png");
    depthdistill::io_formats::write_depth_png16(&small, &small_path).unwrap();
    let out = run(&[
        "eval",
        "--pred",
        small_path.to_str().unwrap(),
        "--gt",
        &format!("{scene}/gt.pfm"),
    ]);
    assert_code(&out, 2, "eval dimension mismatch");
}

#[test]
fn eval_of_identical_maps_reports_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "4");
    let gt = format!("{scene}/gt.pfm");
    let out = run(&["eval", "--pred", &gt, "--gt", &gt]);
    assert_code(&out, 0, "eval self");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row = stdout.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    for f in &fields[..4] {
        assert_eq!(f.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn warp_identity_pose_reproduces_source() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "5");
    let out_dir = dir.path().join("warp");
    let out = run(&[
        "warp",
        "--image",
        &format!("{scene}/frame0.png"),
        "--depth",
        &format!("{scene}/gt.pfm"),
        "--intrinsics",
        &format!("{scene}/K.txt"),
        "--pose",
        &format!("{scene}/pose0.txt"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "warp identity");
    let recon = read_pfm(&out_dir.join("recon.pfm")).unwrap();
    let source = read_image(Path::new(&format!("{scene}/frame0.png"))).unwrap();
    let valid = read_image(&out_dir.join("valid.png")).unwrap();
    let mut compared = 0usize;
    for idx in 0..48 * 64 {
        if valid.data()[idx] < 0.5 {
            continue;
        }
        for ch in 0..3 {
            let r = f64::from(recon.data[idx * 3 + ch]);
            let s = source.data()[idx * 3 + ch];
            assert!((r - s).abs() < 1e-6, "pixel {idx} channel {ch}: {r} vs {s}");
        }
        compared += 1;
    }
    assert!(compared > 2500, "only {compared} valid pixels");
}

#[test]
fn distill_on_single_teacher_returns_that_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "6");
    // Rewrite the manifest to expose only the exact completion teacher.
    let manifest_path = format!("{scene}/manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["teachers"] = serde_json::json!([
        {"name": "exact", "kind": "completion", "depth": "teacher_exact.pfm"}
    ]);
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();

    let out_dir = dir.path().join("distill");
    let out = run(&[
        "distill",
        "--manifest",
        &manifest_path,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "single-teacher distill");

    let csv = std::fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "exact,1");

    // Distilled depth equals the teacher wherever valid (PNG16 quantization
    // applies to both sides identically).
    let distilled =
        depthdistill::io_formats::read_depth_png16(&out_dir.join("distilled_depth.png")).unwrap();
    let teacher = read_pfm(Path::new(&format!("{scene}/teacher_exact.pfm")))
        .unwrap()
        .to_depth_map()
        .unwrap();
    let mut valid_px = 0usize;
    for idx in 0..48 * 64 {
        if distilled.valid()[idx] {
            valid_px += 1;
            let q = (teacher.depths()[idx] * 256.0).round() / 256.0;
            assert!((distilled.depths()[idx] - q).abs() < 1e-9);
        }
    }
    assert!(valid_px > 2500);

    // Confidence lives in [0, 1] with the same dimensions.
    let conf = read_pfm(&out_dir.join("confidence.pfm")).unwrap();
    assert_eq!((conf.height, conf.width), (48, 64));
    assert!(conf.data.iter().all(|&c| (0.0..=1.0).contains(&c)));
}

#[test]
fn distill_histogram_dominated_by_exact_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "7");
    let out_dir = dir.path().join("distill");
    let out = run(&[
        "distill",
        "--manifest",
        &format!("{scene}/manifest.json"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "distill");
    let csv = std::fs::read_to_string(out_dir.join("selection.csv")).unwrap();
    let mut fractions = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let (name, frac) = line.split_once(',').unwrap();
        fractions.insert(name.to_string(), frac.parse::<f64>().unwrap());
    }
    // The synthetic stereo teacher equals the exact teacher, so between them
    // they must dominate; ties go to the completion entry.
    assert!(
        fractions["exact"] > 0.95,
        "exact fraction {}",
        fractions["exact"]
    );
    let total: f64 = fractions.values().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn loss_command_writes_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "8");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scales": 2, "scale_weights": [0.6, 0.4]}"#).unwrap();
    let out_dir = dir.path().join("loss");
    let out = run(&[
        "loss",
        "--manifest",
        &format!("{scene}/manifest.json"),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "loss");
    let body: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("loss.json")).unwrap()).unwrap();
    assert!(body["multiview"]["total"].as_f64().unwrap() >= 0.0);
    assert_eq!(body["multiscale"]["per_scale"].as_array().unwrap().len(), 2);
}

#[test]
fn as2d_check_oracle_passes_and_writes_weights() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path(), "9");
    let out_dir = dir.path().join("as2d");
    let out = run(&[
        "as2d",
        "--depth",
        &format!("{scene}/sparse0.png"),
        "--seeded-weights",
        "13",
        "--check-oracle",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "as2d");
    assert!(out_dir.join("dense_depth.png").exists());

    // The saved weights reload and reproduce the same output.
    let weights = out_dir.join("weights.json");
    let out_dir2 = dir.path().join("as2d2");
    let out = run(&[
        "as2d",
        "--depth",
        &format!("{scene}/sparse0.png"),
        "--weights",
        weights.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "as2d reload");
    let a = std::fs::read(out_dir.join("dense_depth.png")).unwrap();
    let b = std::fs::read(out_dir2.join("dense_depth.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn synth_rerun_with_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_scene(&dir.path().join("a"), "42");
    let b = synth_scene(&dir.path().join("b"), "42");
    for name in [
        "frame0.png",
        "sparse1.png",
        "teacher_noisy.pfm",
        "gt.pfm",
        "manifest.json",
    ] {
        let fa = std::fs::read(format!("{a}/{name}")).unwrap();
        let fb = std::fs::read(format!("{b}/{name}")).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical-seed runs");
    }
    let c = synth_scene(&dir.path().join("c"), "43");
    let fa = std::fs::read(format!("{a}/frame0.png")).unwrap();
    let fc = std::fs::read(format!("{c}/frame0.png")).unwrap();
    assert_ne!(fa, fc, "different seeds must differ");
}
