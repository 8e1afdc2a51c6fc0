use std::path::Path;

use depthdistill::geometry::warp_image;
use depthdistill::grid::ImageBuf;
use depthdistill::io_formats::{
    parse_intrinsics, parse_pose, read_image, write_image_png8, write_pfm, PfmBuffer,
};

use crate::commands::read_depth_any;
use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

pub fn run(
    image_path: &Path,
    depth_path: &Path,
    k_path: &Path,
    pose_path: &Path,
    out: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let src = read_image(image_path)?;
    let depth = read_depth_any(depth_path)?;
    let k = parse_intrinsics(k_path)?;
    let pose = parse_pose(pose_path)?;

    let (recon, valid) = warp_image(&src, &depth, &k, &pose)?;

    ensure_out_dir(out)?;
    let recon_path = out.join("recon.pfm");
    write_pfm(&PfmBuffer::from_image(&recon), &recon_path)?;
    let mask_path = out.join("valid.png");
    let mask_img = ImageBuf::new(
        recon.height(),
        recon.width(),
        1,
        valid
            .data()
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect(),
    )
    .map_err(|e| CliError::input(e.to_string()))?;
    write_image_png8(&mask_img, &mask_path)?;

    let mut meta = RunManifest::new(
        "warp",
        cfg,
        cfg.seed,
        serde_json::json!({
            "image": image_path.display().to_string(),
            "depth": depth_path.display().to_string(),
            "intrinsics": k_path.display().to_string(),
            "pose": pose_path.display().to_string(),
        }),
    );
    for p in [image_path, depth_path, k_path, pose_path] {
        meta.add_input(p)?;
    }
    meta.add_output(&recon_path, out)?;
    meta.add_output(&mask_path, out)?;
    meta.write(out)?;

    println!("valid pixels: {}", valid.count());
    Ok(())
}
