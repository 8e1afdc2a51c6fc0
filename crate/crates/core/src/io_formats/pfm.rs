//! Portable Float Map reader/writer.
//!
//! Header: magic `Pf` (grayscale) or `PF` (color), dimensions `W H`, and a
//! scale whose sign encodes endianness (negative = little-endian). The binary
//! payload is rows bottom-up, 32-bit IEEE floats. Written files are always
//! little-endian (scale -1.0) and round-trip bit-exactly.

use std::path::Path;

use super::{path_str, IoFormatError};
use crate::grid::{DepthMap, GridError, ImageBuf};

/// Raw PFM contents: top-down row-major, channel-interleaved f32 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        assert!(channels == 1 || channels == 3);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Grayscale buffer from a depth map; invalid pixels become 0.
    pub fn from_depth_map(depth: &DepthMap) -> Self {
        Self {
            height: depth.height(),
            width: depth.width(),
            channels: 1,
            data: depth.depths().iter().map(|&d| d as f32).collect(),
        }
    }

    /// Depth map with positive finite samples valid, everything else 0/invalid.
    pub fn to_depth_map(&self) -> Result<DepthMap, GridError> {
        DepthMap::from_depths(
            self.height,
            self.width,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn from_image(img: &ImageBuf) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Image in [0, 1]; out-of-range samples are an error, not a clamp.
    pub fn to_image(&self, path_for_error: &Path) -> Result<ImageBuf, IoFormatError> {
        for (index, &v) in self.data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(IoFormatError::IntensityOutOfRange {
                    path: path_str(path_for_error),
                    index,
                    value: f64::from(v),
                });
            }
        }
        Ok(ImageBuf::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )?)
    }

    /// Grayscale buffer from arbitrary per-pixel values (confidence maps).
    pub fn from_gray(height: usize, width: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            channels: 1,
            data: values.iter().map(|&v| v as f32).collect(),
        }
    }
}

fn header_error(path: &Path, reason: &str) -> IoFormatError {
    IoFormatError::MalformedPfmHeader {
        path: path_str(path),
        reason: reason.to_string(),
    }
}

/// Reads a PFM file of either endianness.
pub fn read_pfm(path: &Path) -> Result<PfmBuffer, IoFormatError> {
    let bytes = std::fs::read(path).map_err(|source| IoFormatError::Unreadable {
        path: path_str(path),
        source,
    })?;

    // Header: three whitespace-delimited tokens after the magic, then one
    // single whitespace byte, then the raw payload.
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Option<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos > start {
            let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
            pos += 1; // consume the single delimiter after the token
            Some(tok)
        } else {
            None
        }
    };

    let magic = next_token(&bytes).ok_or_else(|| header_error(path, "missing magic"))?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(header_error(path, &format!("bad magic {other:?}"))),
    };
    let width: usize = next_token(&bytes)
        .ok_or_else(|| header_error(path, "missing width"))?
        .parse()
        .map_err(|_| header_error(path, "width is not an integer"))?;
    let height: usize = next_token(&bytes)
        .ok_or_else(|| header_error(path, "missing height"))?
        .parse()
        .map_err(|_| header_error(path, "height is not an integer"))?;
    let scale: f64 = next_token(&bytes)
        .ok_or_else(|| header_error(path, "missing scale"))?
        .parse()
        .map_err(|_| header_error(path, "scale is not a number"))?;
    if width == 0 || height == 0 {
        return Err(header_error(path, "zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(header_error(path, "scale must be finite and nonzero"));
    }
    let little_endian = scale < 0.0;

    let n_samples = width * height * channels;
    let expected = n_samples * 4;
    let payload = &bytes[pos.min(bytes.len())..];
    if payload.len() < expected {
        return Err(IoFormatError::TruncatedPfm {
            path: path_str(path),
            expected,
            found: payload.len(),
        });
    }

    // Rows are stored bottom-up; flip to top-down.
    let mut data = vec![0.0f32; n_samples];
    let row_samples = width * channels;
    for file_row in 0..height {
        let out_row = height - 1 - file_row;
        for s in 0..row_samples {
            let off = (file_row * row_samples + s) * 4;
            let raw: [u8; 4] = payload[off..off + 4].try_into().expect("length checked");
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[out_row * row_samples + s] = v;
        }
    }
    Ok(PfmBuffer {
        height,
        width,
        channels,
        data,
    })
}

/// Writes a little-endian PFM file (scale -1.0).
pub fn write_pfm(buf: &PfmBuffer, path: &Path) -> Result<(), IoFormatError> {
    let magic = if buf.channels == 1 { "Pf" } else { "PF" };
    let mut out = Vec::with_capacity(32 + buf.data.len() * 4);
    out.extend_from_slice(format!("{magic}\n{} {}\n-1.0\n", buf.width, buf.height).as_bytes());
    let row_samples = buf.width * buf.channels;
    for file_row in 0..buf.height {
        let src_row = buf.height - 1 - file_row;
        for s in 0..row_samples {
            out.extend_from_slice(&buf.data[src_row * row_samples + s].to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|source| IoFormatError::Unwritable {
        path: path_str(path),
        source,
    })
}
