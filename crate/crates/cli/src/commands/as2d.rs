use std::path::Path;

use depthdistill::as2d::{as2d_forward, as2d_forward_oracle, AS2DWeights};
use depthdistill::io_formats::write_depth_png16;

use crate::commands::read_depth_any;
use crate::config::RunConfig;
use crate::runmeta::{ensure_out_dir, RunManifest};
use crate::CliError;

/// Tolerance of --check-oracle: optimized vs naive forward, absolute.
pub const ORACLE_TOLERANCE: f64 = 1e-5;

pub fn run(
    depth_path: &Path,
    weights_path: Option<&Path>,
    seeded_weights: Option<u64>,
    check_oracle: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let sparse = read_depth_any(depth_path)?;
    let (as2d_cfg, weights) = match (weights_path, seeded_weights) {
        (Some(path), None) => {
            AS2DWeights::load(path).map_err(|e| CliError::input(e.to_string()))?
        }
        (None, seed) => {
            let c = cfg.as2d_config();
            let w = AS2DWeights::seeded(&c, seed.unwrap_or(cfg.seed));
            (c, w)
        }
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };

    let dense = as2d_forward(&sparse, &weights, &as2d_cfg)?;

    ensure_out_dir(out)?;
    let dense_path = out.join("dense_depth.png");
    write_depth_png16(&dense, &dense_path)?;
    let weights_out = out.join("weights.json");
    weights
        .save(&as2d_cfg, &weights_out)
        .map_err(|e| CliError::input(e.to_string()))?;

    let oracle_report = if check_oracle {
        let reference = as2d_forward_oracle(&sparse, &weights, &as2d_cfg)?;
        let mut max_diff = 0.0f64;
        for (a, b) in dense.depths().iter().zip(reference.depths()) {
            max_diff = max_diff.max((a - b).abs());
        }
        Some(max_diff)
    } else {
        None
    };

    let mut meta = RunManifest::new(
        "as2d",
        cfg,
        seeded_weights.unwrap_or(cfg.seed),
        serde_json::json!({
            "depth": depth_path.display().to_string(),
            "weights": weights_path.map(|p| p.display().to_string()),
            "seeded_weights": seeded_weights,
            "check_oracle": check_oracle,
        }),
    );
    meta.add_input(depth_path)?;
    if let Some(p) = weights_path {
        meta.add_input(p)?;
    }
    meta.add_output(&dense_path, out)?;
    meta.add_output(&weights_out, out)?;
    meta.write(out)?;

    println!(
        "densified {} -> {} valid pixels",
        sparse.valid_count(),
        dense.valid_count()
    );
    if let Some(max_diff) = oracle_report {
        println!("oracle max abs diff: {max_diff:.3e}");
        if max_diff >= ORACLE_TOLERANCE {
            return Err(CliError::numerical(format!(
                "optimized forward disagrees with the reference by {max_diff:.3e} >= {ORACLE_TOLERANCE:.0e}"
            )));
        }
    }
    Ok(())
}
