//! Plain-text calibration files: a 3x3 intrinsic matrix K and 4x4 row-major
//! rigid poses.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{path_str, IoFormatError};
use crate::geometry::{Intrinsics, PoseSE3};

/// Tolerance for re-orthonormalizing parsed rotations.
const POSE_ORTHO_TOL: f64 = 1e-6;
/// Tolerance on structurally-zero entries (K off-diagonals, pose bottom row).
const STRUCT_TOL: f64 = 1e-9;

fn parse_numbers(path: &Path, expected: usize) -> Result<Vec<f64>, IoFormatError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoFormatError::Unreadable {
        path: path_str(path),
        source,
    })?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != expected {
        return Err(IoFormatError::WrongElementCount {
            path: path_str(path),
            expected,
            found: tokens.len(),
        });
    }
    tokens
        .iter()
        .enumerate()
        .map(|(index, tok)| {
            tok.parse::<f64>().map_err(|_| IoFormatError::NotANumber {
                path: path_str(path),
                index,
                token: tok.to_string(),
            })
        })
        .collect()
}

/// Parses a whitespace-separated 3x3 pinhole matrix
/// `fx 0 cx / 0 fy cy / 0 0 1`.
pub fn parse_intrinsics(path: &Path) -> Result<Intrinsics, IoFormatError> {
    let v = parse_numbers(path, 9)?;
    let structural = [(1, v[1]), (3, v[3]), (6, v[6]), (7, v[7])];
    for (i, val) in structural {
        if val.abs() > STRUCT_TOL {
            return Err(IoFormatError::BadCalibration {
                path: path_str(path),
                reason: format!("K element {i} must be 0 (skew/projective terms unsupported)"),
            });
        }
    }
    if (v[8] - 1.0).abs() > STRUCT_TOL {
        return Err(IoFormatError::BadCalibration {
            path: path_str(path),
            reason: "K bottom-right element must be 1".into(),
        });
    }
    Ok(Intrinsics::new(v[0], v[4], v[2], v[5])?)
}

pub fn write_intrinsics(k: &Intrinsics, path: &Path) -> Result<(), IoFormatError> {
    let text = format!("{} 0 {}\n0 {} {}\n0 0 1\n", k.fx, k.cx, k.fy, k.cy);
    std::fs::write(path, text).map_err(|source| IoFormatError::Unwritable {
        path: path_str(path),
        source,
    })
}

/// Parses a whitespace-separated 4x4 row-major rigid transform. Rotations
/// within 1e-6 of orthonormal are projected onto the nearest rotation;
/// reflections are rejected.
pub fn parse_pose(path: &Path) -> Result<PoseSE3, IoFormatError> {
    let v = parse_numbers(path, 16)?;
    let bottom = [v[12], v[13], v[14], v[15] - 1.0];
    if bottom.iter().any(|b| b.abs() > STRUCT_TOL) {
        return Err(IoFormatError::BadCalibration {
            path: path_str(path),
            reason: "pose bottom row must be 0 0 0 1".into(),
        });
    }
    let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let translation = Vector3::new(v[3], v[7], v[11]);
    Ok(PoseSE3::from_matrix_nearest(
        rotation,
        translation,
        POSE_ORTHO_TOL,
    )?)
}

pub fn write_pose(pose: &PoseSE3, path: &Path) -> Result<(), IoFormatError> {
    let r = pose.rotation();
    let t = pose.translation();
    let mut text = String::new();
    for row in 0..3 {
        text.push_str(&format!(
            "{} {} {} {}\n",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)],
            t[row]
        ));
    }
    text.push_str("0 0 0 1\n");
    std::fs::write(path, text).map_err(|source| IoFormatError::Unwritable {
        path: path_str(path),
        source,
    })
}
