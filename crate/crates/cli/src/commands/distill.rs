use std::path::Path;

use depthdistill::distill::{
    ensemble_select, selection_histogram, stereo_fuse, teacher_error_maps, TeacherKind,
};
use depthdistill::io_formats::{
    load_manifest, write_depth_png16, write_pfm, write_selection_csv, PfmBuffer,
};
use depthdistill::losses::SourceView;

use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

pub fn run(manifest_path: &Path, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let scene = load_manifest(manifest_path)?;
    let teachers = scene.teacher_set()?;
    if !teachers
        .entries()
        .iter()
        .any(|e| e.kind == TeacherKind::Completion)
    {
        return Err(CliError::input(
            "manifest must list at least one completion teacher".into(),
        ));
    }
    let target = scene.target();
    let sources: Vec<SourceView> = scene
        .source_frames()
        .map(|f| SourceView {
            image: &f.image,
            pose_from_target: &f.pose_from_target,
        })
        .collect();
    if sources.is_empty() {
        return Err(CliError::input(
            "manifest needs at least one non-target frame as a source view".into(),
        ));
    }

    let weights = cfg.loss_weights();
    let errors = teacher_error_maps(
        &teachers,
        &target.image,
        &sources,
        &scene.intrinsics,
        &weights,
    )?;
    let (mut distilled, mut derr) = ensemble_select(&teachers, &errors, cfg.confidence_sigma)?;
    if let Some(stereo_idx) = teachers.stereo_index() {
        (distilled, derr) = stereo_fuse(
            &distilled,
            &derr,
            &teachers.entries()[stereo_idx].depth,
            &errors[stereo_idx],
            stereo_idx,
            cfg.confidence_sigma,
        )?;
    }
    let _ = derr;
    let histogram = selection_histogram(&distilled, &teachers)?;

    ensure_out_dir(out)?;
    let depth_path = out.join("distilled_depth.png");
    let conf_path = out.join("confidence.pfm");
    let csv_path = out.join("selection.csv");
    write_depth_png16(&distilled.depth, &depth_path)?;
    write_pfm(
        &PfmBuffer::from_gray(
            distilled.depth.height(),
            distilled.depth.width(),
            &distilled.confidence,
        ),
        &conf_path,
    )?;
    write_selection_csv(&histogram, &csv_path)?;

    let mut meta = RunManifest::new(
        "distill",
        cfg,
        cfg.seed,
        serde_json::json!({"manifest": manifest_path.display().to_string()}),
    );
    meta.add_input(manifest_path)?;
    for p in [&depth_path, &conf_path, &csv_path] {
        meta.add_output(p, out)?;
    }
    meta.write(out)?;

    for (name, frac) in &histogram {
        println!("{name}: {frac:.6}");
    }
    Ok(())
}
