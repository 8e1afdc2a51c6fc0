//! Bit-exact readers and writers for the file formats the pipeline consumes
//! and produces: 16-bit PNG depth maps (KITTI convention, depth = stored/256
//! meters, 0 = invalid), PFM float rasters, plain-text calibration and pose
//! files, JSON scene manifests, and CSV reports.
//!
//! PNG16 is the only lossy boundary (depth snaps to the 1/256 m grid); PFM
//! round-trips are exact for single-precision values, and parsers never
//! partially succeed.

mod calib;
mod manifest;
mod pfm;
mod png16;

pub use calib::{parse_intrinsics, parse_pose, write_intrinsics, write_pose};
pub use manifest::{
    load_manifest, FrameSpec, ManifestTeacherKind, Scene, SceneFrame, SceneManifest, TeacherSpec,
};
pub use pfm::{read_pfm, write_pfm, PfmBuffer};
pub use png16::{read_depth_png16, read_image, write_depth_png16, write_image_png8};

use std::path::Path;

use thiserror::Error;

use crate::distill::DistillError;
use crate::geometry::GeometryError;
use crate::grid::GridError;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a decodable image: {source}")]
    Undecodable {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: expected a 16-bit image, found {found}")]
    WrongBitDepth { path: String, found: String },
    #[error("{path}: expected {expected} channel(s), found {found}")]
    WrongChannelCount {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: malformed PFM header: {reason}")]
    MalformedPfmHeader { path: String, reason: String },
    #[error("{path}: PFM payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPfm {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: expected {expected} numbers, found {found}")]
    WrongElementCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: element {index} is not a number: {token:?}")]
    NotANumber {
        path: String,
        index: usize,
        token: String,
    },
    #[error("{path}: {reason}")]
    BadCalibration { path: String, reason: String },
    #[error("{path}: manifest schema violation: {reason}")]
    Schema { path: String, reason: String },
    #[error("manifest references missing file {path}")]
    MissingFile { path: String },
    #[error("{path}: {context}: expected {expected_h}x{expected_w}, found {got_h}x{got_w}")]
    DimensionMismatch {
        path: String,
        context: String,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("{path}: image intensity {value} at index {index} outside [0, 1]")]
    IntensityOutOfRange {
        path: String,
        index: usize,
        value: f64,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

pub(crate) fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes a (name, fraction) selection histogram as `name,fraction` lines.
pub fn write_selection_csv(histogram: &[(String, f64)], path: &Path) -> Result<(), IoFormatError> {
    let mut out = String::from("teacher,fraction\n");
    for (name, frac) in histogram {
        out.push_str(&format!("{name},{frac}\n"));
    }
    std::fs::write(path, out).map_err(|source| IoFormatError::Unwritable {
        path: path_str(path),
        source,
    })
}
