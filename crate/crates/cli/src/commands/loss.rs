use std::path::Path;

use depthdistill::grid::build_depth_pyramid;
use depthdistill::io_formats::load_manifest;
use depthdistill::losses::{multiscale_loss, multiview_consistency_loss, PosePairs, ViewFrame};

use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

pub fn run(manifest_path: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let scene = load_manifest(manifest_path)?;
    if scene.frames.len() < 2 {
        return Err(CliError::input(
            "loss needs at least two frames in the manifest".into(),
        ));
    }
    let weights = cfg.loss_weights();

    let frames: Vec<ViewFrame> = scene
        .frames
        .iter()
        .map(|f| ViewFrame {
            image: &f.image,
            depth: &f.sparse_depth,
        })
        .collect();
    let frame_poses: Vec<_> = scene
        .frames
        .iter()
        .map(|f| f.pose_from_target.clone())
        .collect();
    let pairs = PosePairs::from_reference_poses(&frame_poses);
    let multiview = multiview_consistency_loss(&frames, &pairs, &scene.intrinsics, &weights)?;

    let target = scene.target();
    let pyramid = build_depth_pyramid(&target.sparse_depth, cfg.scales)?;
    let sources: Vec<&depthdistill::ImageBuf> = scene.source_frames().map(|f| &f.image).collect();
    let poses: Vec<_> = scene
        .source_frames()
        .map(|f| f.pose_from_target.clone())
        .collect();
    let multiscale = multiscale_loss(
        &pyramid,
        &target.image,
        &sources,
        &poses,
        &scene.intrinsics,
        &cfg.scale_weights,
        &weights,
    )?;

    ensure_out_dir(out)?;
    let loss_path = out.join("loss.json");
    let body = serde_json::json!({
        "multiview": multiview,
        "multiscale": multiscale,
    });
    std::fs::write(&loss_path, serde_json::to_string_pretty(&body).unwrap())
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", loss_path.display())))?;

    let mut meta = RunManifest::new(
        "loss",
        cfg,
        cfg.seed,
        serde_json::json!({"manifest": manifest_path.display().to_string()}),
    );
    meta.add_input(manifest_path)?;
    meta.add_output(&loss_path, out)?;
    meta.write(out)?;

    println!(
        "multiview total {:.6} (photometric {:.6}, structure {:.6})",
        multiview.total, multiview.photometric, multiview.structure
    );
    println!(
        "multiscale total {:.6} over {} levels",
        multiscale.total,
        multiscale.per_scale.len()
    );
    Ok(())
}
