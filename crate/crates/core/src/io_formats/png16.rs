//! PNG I/O: 16-bit grayscale depth maps (depth = stored/256 m, stored 0 =
//! invalid) and 8-bit images.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{path_str, IoFormatError};
use crate::grid::{DepthMap, ImageBuf};

fn open_image(path: &Path) -> Result<DynamicImage, IoFormatError> {
    let bytes = std::fs::read(path).map_err(|source| IoFormatError::Unreadable {
        path: path_str(path),
        source,
    })?;
    image::load_from_memory(&bytes).map_err(|source| IoFormatError::Undecodable {
        path: path_str(path),
        source,
    })
}

fn variant_name(img: &DynamicImage) -> &'static str {
    match img {
        DynamicImage::ImageLuma8(_) => "8-bit grayscale",
        DynamicImage::ImageLumaA8(_) => "8-bit grayscale+alpha",
        DynamicImage::ImageRgb8(_) => "8-bit RGB",
        DynamicImage::ImageRgba8(_) => "8-bit RGBA",
        DynamicImage::ImageLuma16(_) => "16-bit grayscale",
        DynamicImage::ImageLumaA16(_) => "16-bit grayscale+alpha",
        DynamicImage::ImageRgb16(_) => "16-bit RGB",
        DynamicImage::ImageRgba16(_) => "16-bit RGBA",
        _ => "unsupported pixel format",
    }
}

/// Reads a 16-bit grayscale PNG as metric depth: depth = stored/256 meters,
/// stored 0 marks an invalid pixel.
pub fn read_depth_png16(path: &Path) -> Result<DepthMap, IoFormatError> {
    let img = open_image(path)?;
    let gray = match img {
        DynamicImage::ImageLuma16(g) => g,
        DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLumaA16(_) => {
            return Err(IoFormatError::WrongChannelCount {
                path: path_str(path),
                expected: "1".into(),
                found: variant_name(&img).into(),
            });
        }
        other => {
            return Err(IoFormatError::WrongBitDepth {
                path: path_str(path),
                found: variant_name(&other).into(),
            });
        }
    };
    let (w, h) = gray.dimensions();
    let mut depth = vec![0.0; (w * h) as usize];
    let mut valid = vec![false; (w * h) as usize];
    for (i, px) in gray.pixels().enumerate() {
        let stored = px.0[0];
        if stored > 0 {
            depth[i] = f64::from(stored) / 256.0;
            valid[i] = true;
        }
    }
    Ok(DepthMap::new(h as usize, w as usize, depth, valid)?)
}

/// Writes depth as 16-bit grayscale PNG, stored = round(depth * 256).
///
/// This is the pipeline's only lossy boundary: depth snaps to the 1/256 m
/// grid, saturates at 65535 (255.996 m), and valid depths below 1/512 m
/// would round to the invalid sentinel.
pub fn write_depth_png16(map: &DepthMap, path: &Path) -> Result<(), IoFormatError> {
    let w = map.width() as u32;
    let h = map.height() as u32;
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w, h);
    for (i, px) in img.pixels_mut().enumerate() {
        let stored = if map.valid()[i] {
            (map.depths()[i] * 256.0).round().min(65535.0) as u16
        } else {
            0
        };
        *px = Luma([stored]);
    }
    img.save(path).map_err(|source| match source {
        image::ImageError::IoError(io) => IoFormatError::Unwritable {
            path: path_str(path),
            source: io,
        },
        other => IoFormatError::Undecodable {
            path: path_str(path),
            source: other,
        },
    })
}

/// Reads an 8-bit grayscale/RGB PNG (or a PFM by extension) as intensities
/// in [0, 1].
pub fn read_image(path: &Path) -> Result<ImageBuf, IoFormatError> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
    {
        return super::read_pfm(path)?.to_image(path);
    }
    let img = open_image(path)?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let data = g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect();
            Ok(ImageBuf::new(h as usize, w as usize, 1, data)?)
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            let mut data = Vec::with_capacity((w * h * 3) as usize);
            for p in rgb.pixels() {
                data.extend(p.0.iter().map(|&v| f64::from(v) / 255.0));
            }
            Ok(ImageBuf::new(h as usize, w as usize, 3, data)?)
        }
        other => Err(IoFormatError::WrongChannelCount {
            path: path_str(path),
            expected: "1 or 3 (8-bit)".into(),
            found: variant_name(&other).into(),
        }),
    }
}

/// Writes an image as 8-bit PNG (grayscale or RGB by channel count).
pub fn write_image_png8(img: &ImageBuf, path: &Path) -> Result<(), IoFormatError> {
    let w = img.width() as u32;
    let h = img.height() as u32;
    let quantize = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let save_result = if img.channels() == 1 {
        let mut out: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(w, h);
        for (i, px) in out.pixels_mut().enumerate() {
            *px = Luma([quantize(img.data()[i])]);
        }
        out.save(path)
    } else {
        let mut out: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w, h);
        for (i, px) in out.pixels_mut().enumerate() {
            *px = Rgb([
                quantize(img.data()[i * 3]),
                quantize(img.data()[i * 3 + 1]),
                quantize(img.data()[i * 3 + 2]),
            ]);
        }
        out.save(path)
    };
    save_result.map_err(|source| match source {
        image::ImageError::IoError(io) => IoFormatError::Unwritable {
            path: path_str(path),
            source: io,
        },
        other => IoFormatError::Undecodable {
            path: path_str(path),
            source: other,
        },
    })
}
