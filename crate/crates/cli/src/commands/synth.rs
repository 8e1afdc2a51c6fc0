use std::path::Path;

use depthdistill::geometry::PoseSE3;
use depthdistill::io_formats::{
    write_depth_png16, write_image_png8, write_intrinsics, write_pfm, write_pose, FrameSpec,
    ManifestTeacherKind, PfmBuffer, SceneManifest, TeacherSpec,
};
use depthdistill::synth::{
    corrupt_depth, generate_plane_scene, generate_slanted_scene, sparsify, CorruptionModel,
};
use depthdistill::Intrinsics;

use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

/// Renders a three-frame textured plane scene and exports it as a manifest:
/// 8-bit frame images, 16-bit sparse depths, text poses, float-exact PFM
/// teachers (exact, scaled, noisy, holes, and an exact stereo teacher), and
/// float-exact ground truth for the target frame.
#[allow(clippy::too_many_arguments)]
pub fn run(
    out: &Path,
    width: usize,
    height: usize,
    plane_depth: f64,
    sparsity: f64,
    slanted: bool,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    if width < 16 || height < 16 {
        return Err(CliError::input("scene must be at least 16x16".into()));
    }
    if plane_depth.is_nan() || plane_depth <= 0.0 {
        return Err(CliError::input("plane depth must be positive".into()));
    }
    if sparsity.is_nan() || sparsity <= 0.0 || sparsity > 1.0 {
        return Err(CliError::input("sparsity must be in (0, 1]".into()));
    }
    let seed = cfg.seed;
    let k = Intrinsics::new(100.0, 100.0, width as f64 / 2.0, height as f64 / 2.0)?;
    // Baselines scale with the scene so disparities stay a few pixels.
    let tx = 0.05 * plane_depth;
    let poses = vec![
        PoseSE3::identity(),
        PoseSE3::from_translation(tx, 0.0, 0.0),
        PoseSE3::from_translation(0.0, 0.8 * tx, 0.04 * tx),
    ];
    let scene = if slanted {
        generate_slanted_scene(
            &k,
            plane_depth,
            (0.1 * plane_depth, 0.05 * plane_depth),
            seed,
            &poses,
            (height, width),
        )?
    } else {
        generate_plane_scene(&k, plane_depth, seed, &poses, (height, width))?
    };

    ensure_out_dir(out)?;
    let mut meta = RunManifest::new(
        "synth",
        cfg,
        seed,
        serde_json::json!({
            "width": width,
            "height": height,
            "plane_depth": plane_depth,
            "sparsity": sparsity,
            "slanted": slanted,
        }),
    );

    let mut frames = Vec::new();
    for (i, frame) in scene.frames.iter().enumerate() {
        let image_rel = format!("frame{i}.png");
        let sparse_rel = format!("sparse{i}.png");
        let pose_rel = format!("pose{i}.txt");
        write_image_png8(&frame.image, &out.join(&image_rel))?;
        let sparse = sparsify(&frame.depth, sparsity, seed.wrapping_add(100 + i as u64))?;
        write_depth_png16(&sparse, &out.join(&sparse_rel))?;
        write_pose(&frame.pose_from_ref, &out.join(&pose_rel))?;
        frames.push(FrameSpec {
            image: image_rel,
            sparse_depth: sparse_rel,
            pose: pose_rel,
            target: i == 0,
        });
    }

    let exact = &scene.frames[0].depth;
    let teacher_files: [(&str, ManifestTeacherKind, depthdistill::DepthMap); 5] = [
        ("exact", ManifestTeacherKind::Completion, exact.clone()),
        (
            "scaled",
            ManifestTeacherKind::Completion,
            corrupt_depth(exact, CorruptionModel::Scale, 1.3, seed.wrapping_add(1))?,
        ),
        (
            "noisy",
            ManifestTeacherKind::Completion,
            corrupt_depth(
                exact,
                CorruptionModel::AdditiveNoise,
                0.1 * plane_depth,
                seed.wrapping_add(2),
            )?,
        ),
        (
            "holes",
            ManifestTeacherKind::Completion,
            corrupt_depth(exact, CorruptionModel::Holes, 0.3, seed.wrapping_add(3))?,
        ),
        ("stereo", ManifestTeacherKind::Stereo, exact.clone()),
    ];
    let mut teachers = Vec::new();
    for (name, kind, depth) in &teacher_files {
        let rel = format!("teacher_{name}.pfm");
        write_pfm(&PfmBuffer::from_depth_map(depth), &out.join(&rel))?;
        teachers.push(TeacherSpec {
            name: (*name).to_string(),
            kind: *kind,
            depth: rel,
        });
    }

    write_intrinsics(&k, &out.join("K.txt"))?;
    write_pfm(&PfmBuffer::from_depth_map(exact), &out.join("gt.pfm"))?;

    let manifest = SceneManifest {
        pose_convention: "p_frame = R * p_target + t".into(),
        intrinsics: "K.txt".into(),
        frames,
        teachers,
        ground_truth: Some("gt.pfm".into()),
    };
    let manifest_path = out.join("manifest.json");
    manifest.save(&manifest_path)?;

    let mut outputs = vec![manifest_path];
    for entry in std::fs::read_dir(out)
        .map_err(|e| CliError::input(format!("cannot list {}: {e}", out.display())))?
    {
        let p = entry.map_err(|e| CliError::input(e.to_string()))?.path();
        if p.file_name().is_some_and(|n| n != "run_manifest.json") && !outputs.contains(&p) {
            outputs.push(p);
        }
    }
    outputs.sort();
    for p in &outputs {
        meta.add_output(p, out)?;
    }
    meta.write(out)?;

    println!(
        "scene written to {}: {} frames, {} teachers",
        out.display(),
        scene.frames.len(),
        teacher_files.len()
    );
    Ok(())
}
