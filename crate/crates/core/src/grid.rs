//! Raster containers, bilinear sampling, and image/depth pyramids.
//!
//! [`ImageBuf`] holds intensities in `[0, 1]`, [`DepthMap`] holds metric depth
//! in meters with a validity mask (invalid pixels store depth `0`, which is a
//! sentinel, never a measurement). Both are immutable after construction and
//! all operations here are pure functions.

use thiserror::Error;

/// Maximum number of pyramid levels.
pub const MAX_PYRAMID_LEVELS: usize = 6;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    DataLength {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("image channel count must be 1 or 3, got {0}")]
    BadChannelCount(usize),
    #[error("empty raster ({height}x{width})")]
    EmptyRaster { height: usize, width: usize },
    #[error("value at index {index} is {value}, expected finite in [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("depth at index {index} is {value}, valid pixels require finite depth > 0")]
    BadDepth { index: usize, value: f64 },
    #[error("invalid pixel at index {index} stores depth {value}, expected 0")]
    NonZeroInvalidDepth { index: usize, value: f64 },
    #[error("pyramid levels must be in 1..={max}, got {got}")]
    BadLevelCount { got: usize, max: usize },
    #[error("pyramid level {level} would be {height}x{width}, both dims must stay >= 2")]
    LevelTooSmall {
        level: usize,
        height: usize,
        width: usize,
    },
    #[error("target {target_h}x{target_w} is smaller than source {source_h}x{source_w}")]
    UpsampleShrinks {
        source_h: usize,
        source_w: usize,
        target_h: usize,
        target_w: usize,
    },
    #[error("dimension mismatch: {expected_h}x{expected_w} vs {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
}

/// Row-major H×W×C image with intensities in `[0, 1]`, 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    /// Builds an image, validating shape and the `[0, 1]` range invariant.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyRaster { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(GridError::BadChannelCount(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(GridError::DataLength {
                height,
                width,
                channels,
                got: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(GridError::ValueOutOfRange { index, value });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(
        height: usize,
        width: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, GridError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        debug_assert!(row < self.height && col < self.width && channel < self.channels);
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Mean over channels at one pixel.
    #[inline]
    pub fn luma(&self, row: usize, col: usize) -> f64 {
        let base = (row * self.width + col) * self.channels;
        let mut sum = 0.0;
        for ch in 0..self.channels {
            sum += self.data[base + ch];
        }
        sum / self.channels as f64
    }

    pub fn same_dims(&self, other: &ImageBuf) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Per-channel color plus an in-bounds flag returned by [`bilinear_sample`].
///
/// Only the first `channels` entries of `color` are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub color: [f64; 3],
    pub in_bounds: bool,
}

/// [`Sample`] extended with the spatial derivative of the interpolant,
/// used when chaining gradients through the warp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrad {
    pub color: [f64; 3],
    pub d_du: [f64; 3],
    pub d_dv: [f64; 3],
    pub in_bounds: bool,
}

/// Bilinear interpolation at continuous coordinates (`u` = column, `v` = row).
///
/// The 4-neighbor stencil clamps to valid indices at the border; `in_bounds`
/// is true only when `(u, v)` lies inside `[0, W-1] x [0, H-1]`. Out-of-bounds
/// queries return color 0 with `in_bounds == false` rather than an error.
pub fn bilinear_sample(img: &ImageBuf, u: f64, v: f64) -> Sample {
    let g = bilinear_sample_with_grad(img, u, v);
    Sample {
        color: g.color,
        in_bounds: g.in_bounds,
    }
}

/// Bilinear interpolation together with d(color)/du and d(color)/dv.
///
/// The derivative is the one-sided derivative of the piecewise-bilinear
/// interpolant within the cell containing `(u, v)`.
pub fn bilinear_sample_with_grad(img: &ImageBuf, u: f64, v: f64) -> SampleGrad {
    let w = img.width as f64;
    let h = img.height as f64;
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || v < 0.0 || u > w - 1.0 || v > h - 1.0 {
        return SampleGrad {
            color: [0.0; 3],
            d_du: [0.0; 3],
            d_dv: [0.0; 3],
            in_bounds: false,
        };
    }
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;

    let mut color = [0.0; 3];
    let mut d_du = [0.0; 3];
    let mut d_dv = [0.0; 3];
    for ch in 0..img.channels {
        let c00 = img.get(y0, x0, ch);
        let c10 = img.get(y0, x1, ch);
        let c01 = img.get(y1, x0, ch);
        let c11 = img.get(y1, x1, ch);
        let top = c00 + fx * (c10 - c00);
        let bot = c01 + fx * (c11 - c01);
        color[ch] = top + fy * (bot - top);
        d_du[ch] = (1.0 - fy) * (c10 - c00) + fy * (c11 - c01);
        d_dv[ch] = bot - top;
    }
    SampleGrad {
        color,
        d_du,
        d_dv,
        in_bounds: true,
    }
}

/// Row-major H×W boolean mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self, GridError> {
        if data.len() != height * width {
            return Err(GridError::DataLength {
                height,
                width,
                channels: 1,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn at(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Row-major H×W metric depth in meters with a validity mask.
///
/// Valid pixels store finite depth > 0; invalid pixels store exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(
        height: usize,
        width: usize,
        depth: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, GridError> {
        if height == 0 || width == 0 {
            return Err(GridError::EmptyRaster { height, width });
        }
        let expected = height * width;
        if depth.len() != expected || valid.len() != expected {
            return Err(GridError::DataLength {
                height,
                width,
                channels: 1,
                got: if depth.len() != expected {
                    depth.len()
                } else {
                    valid.len()
                },
            });
        }
        for index in 0..expected {
            if valid[index] {
                if !depth[index].is_finite() || depth[index] <= 0.0 {
                    return Err(GridError::BadDepth {
                        index,
                        value: depth[index],
                    });
                }
            } else if depth[index] != 0.0 {
                return Err(GridError::NonZeroInvalidDepth {
                    index,
                    value: depth[index],
                });
            }
        }
        Ok(Self {
            height,
            width,
            depth,
            valid,
        })
    }

    /// Builds a map where every strictly positive finite value is valid and
    /// everything else becomes the invalid sentinel 0.
    pub fn from_depths(height: usize, width: usize, depth: Vec<f64>) -> Result<Self, GridError> {
        let mut depth = depth;
        let mut valid = vec![false; depth.len()];
        for (d, v) in depth.iter_mut().zip(valid.iter_mut()) {
            if d.is_finite() && *d > 0.0 {
                *v = true;
            } else {
                *d = 0.0;
            }
        }
        Self::new(height, width, depth, valid)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self, GridError> {
        Self::new(
            height,
            width,
            vec![value; height * width],
            vec![true; height * width],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_dims(&self, other: &DepthMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Multi-resolution stack; level 0 is full resolution, each coarser level
/// halves both dimensions (floor), never fewer than 1 or more than 6 levels.
#[derive(Debug, Clone)]
pub struct Pyramid<T> {
    levels: Vec<T>,
}

impl<T> Pyramid<T> {
    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &T {
        &self.levels[k]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

fn check_pyramid_dims(height: usize, width: usize, levels: usize) -> Result<(), GridError> {
    if levels == 0 || levels > MAX_PYRAMID_LEVELS {
        return Err(GridError::BadLevelCount {
            got: levels,
            max: MAX_PYRAMID_LEVELS,
        });
    }
    let shift = levels - 1;
    let h = height >> shift;
    let w = width >> shift;
    if h < 2 || w < 2 {
        return Err(GridError::LevelTooSmall {
            level: shift,
            height: h,
            width: w,
        });
    }
    Ok(())
}

/// Builds an image pyramid by 2x2 box averaging.
pub fn build_image_pyramid(img: &ImageBuf, levels: usize) -> Result<Pyramid<ImageBuf>, GridError> {
    check_pyramid_dims(img.height, img.width, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let prev: &ImageBuf = out.last().unwrap();
        let h = prev.height / 2;
        let w = prev.width / 2;
        let c = prev.channels;
        let mut data = vec![0.0; h * w * c];
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let sum = prev.get(2 * r, 2 * col, ch)
                        + prev.get(2 * r, 2 * col + 1, ch)
                        + prev.get(2 * r + 1, 2 * col, ch)
                        + prev.get(2 * r + 1, 2 * col + 1, ch);
                    data[(r * w + col) * c + ch] = sum / 4.0;
                }
            }
        }
        out.push(ImageBuf::new(h, w, c, data)?);
    }
    Ok(Pyramid { levels: out })
}

/// Builds a depth pyramid by valid-aware 2x2 averaging: each coarse pixel is
/// the mean of the valid fine pixels under it, invalid only when all four are.
pub fn build_depth_pyramid(
    depth: &DepthMap,
    levels: usize,
) -> Result<Pyramid<DepthMap>, GridError> {
    check_pyramid_dims(depth.height, depth.width, levels)?;
    let mut out = Vec::with_capacity(levels);
    out.push(depth.clone());
    for _ in 1..levels {
        let prev: &DepthMap = out.last().unwrap();
        let h = prev.height / 2;
        let w = prev.width / 2;
        let mut d = vec![0.0; h * w];
        let mut v = vec![false; h * w];
        for r in 0..h {
            for col in 0..w {
                let mut sum = 0.0;
                let mut n = 0u32;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let rr = 2 * r + dr;
                    let cc = 2 * col + dc;
                    if prev.is_valid(rr, cc) {
                        sum += prev.depth_at(rr, cc);
                        n += 1;
                    }
                }
                if n > 0 {
                    d[r * w + col] = sum / n as f64;
                    v[r * w + col] = true;
                }
            }
        }
        out.push(DepthMap::new(h, w, d, v)?);
    }
    Ok(Pyramid { levels: out })
}

/// Nearest-neighbor upsampling of depth and mask. Metric values are preserved
/// exactly; no interpolation crosses a validity boundary.
pub fn upsample_to(
    depth: &DepthMap,
    target_h: usize,
    target_w: usize,
) -> Result<DepthMap, GridError> {
    if target_h < depth.height || target_w < depth.width {
        return Err(GridError::UpsampleShrinks {
            source_h: depth.height,
            source_w: depth.width,
            target_h,
            target_w,
        });
    }
    let mut d = vec![0.0; target_h * target_w];
    let mut v = vec![false; target_h * target_w];
    for r in 0..target_h {
        let sr = (r * depth.height / target_h).min(depth.height - 1);
        for c in 0..target_w {
            let sc = (c * depth.width / target_w).min(depth.width - 1);
            let idx = r * target_w + c;
            d[idx] = depth.depth_at(sr, sc);
            v[idx] = depth.is_valid(sr, sc);
        }
    }
    DepthMap::new(target_h, target_w, d, v)
}
