use std::path::Path;

use depthdistill::metrics::evaluate;

use crate::commands::read_depth_any;
use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

pub fn run(
    pred_path: &Path,
    gt_path: &Path,
    out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let pred = read_depth_any(pred_path)?;
    let gt = read_depth_any(gt_path)?;
    let report = evaluate(&pred, &gt)?;
    print!("{}", report.to_csv());
    eprintln!("{report}");

    if let Some(out) = out {
        ensure_out_dir(out)?;
        let csv_path = out.join("metrics.csv");
        std::fs::write(&csv_path, report.to_csv())
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", csv_path.display())))?;
        let mut meta = RunManifest::new(
            "eval",
            cfg,
            cfg.seed,
            serde_json::json!({
                "pred": pred_path.display().to_string(),
                "gt": gt_path.display().to_string(),
            }),
        );
        meta.add_input(pred_path)?;
        meta.add_input(gt_path)?;
        meta.add_output(&csv_path, out)?;
        meta.write(out)?;
    }
    Ok(())
}
