pub mod as2d;
pub mod distill;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod synth;
pub mod warp;

use std::path::Path;

use depthdistill::io_formats::{read_depth_png16, read_pfm, IoFormatError};
use depthdistill::DepthMap;

use crate::CliError;

/// Reads a depth file by extension: PFM for float data, 16-bit PNG otherwise.
pub fn read_depth_any(path: &Path) -> Result<DepthMap, CliError> {
    let result: Result<DepthMap, IoFormatError> = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
    {
        read_pfm(path).and_then(|b| Ok(b.to_depth_map()?))
    } else {
        read_depth_png16(path)
    };
    result.map_err(|e| CliError::input(e.to_string()))
}
