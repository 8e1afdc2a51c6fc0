//! Synthetic-scene oracle: textured planar scenes with exact analytic depth
//! and poses, plus controllable corruptions of depth maps.
//!
//! Every generator is a pure function of its parameters and seed, so scenes
//! regenerate bit-identically. Textures are band-limited sums of sinusoids:
//! their curvature budget is capped so that bilinear resampling of a rendered
//! view stays within the photometric tolerances the reprojection tests rely
//! on.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::{DepthMap, ImageBuf};

/// Hard cap on texture frequency, in cycles per pixel at the reference view.
pub const MAX_CYCLES_PER_PIXEL: f64 = 1.0 / 8.0;

/// Total second-derivative budget of the texture (per channel, intensity
/// units per squared pixel). Bilinear interpolation error is bounded by a
/// small multiple of this, which keeps exact-depth reprojection residuals
/// well under the 0.01 photometric tolerance.
const CURVATURE_BUDGET: f64 = 0.012;

const SINUSOIDS_PER_CHANNEL: usize = 6;
const MAX_TOTAL_AMPLITUDE: f64 = 0.4;

/// Smallest depth kept by the additive-noise corruption, in meters.
const MIN_CORRUPTED_DEPTH: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("plane depth must be positive, got {0}")]
    NonPositivePlaneDepth(f64),
    #[error("frame {frame}: plane falls behind the camera at pixel ({row}, {col})")]
    PlaneBehindCamera {
        frame: usize,
        row: usize,
        col: usize,
    },
    #[error("corruption magnitude must be >= 0, got {0}")]
    NegativeMagnitude(f64),
    #[error("scale corruption requires a positive factor, got {0}")]
    NonPositiveScale(f64),
    #[error("corruption would invalidate every pixel")]
    AllPixelsInvalidated,
    #[error("keep fraction must be in (0, 1], got {0}")]
    BadKeepFraction(f64),
    #[error("depth map has no valid pixels to subsample")]
    NoValidPixels,
    #[error("image dimensions must be nonzero")]
    EmptyDims,
}

/// One rendered view: image, exact depth, and the pose that maps reference
/// camera coordinates into this frame's camera coordinates.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub image: ImageBuf,
    pub depth: DepthMap,
    pub pose_from_ref: PoseSE3,
}

/// A fully synthetic scene with analytic ground truth.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub frames: Vec<SynthFrame>,
    pub intrinsics: Intrinsics,
    pub seed: u64,
}

/// A single band-limited plane texture component.
#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    amplitude: f64,
    // Spatial frequency on the plane, cycles per meter, per axis.
    freq_x: f64,
    freq_y: f64,
    phase: f64,
}

/// Per-channel sinusoid mixtures over plane coordinates, in meters.
#[derive(Debug, Clone)]
struct PlaneTexture {
    channels: Vec<Vec<Sinusoid>>,
}

impl PlaneTexture {
    /// Draws a seeded texture whose frequency (in cycles per pixel at depth
    /// `ref_depth`) stays within the band limit and whose total curvature
    /// stays within [`CURVATURE_BUDGET`].
    fn seeded(seed: u64, k: &Intrinsics, ref_depth: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meters_per_pixel = ref_depth / k.fx.min(k.fy);
        let f_px_max = (MAX_CYCLES_PER_PIXEL * 0.8).min(1.0 / 20.0);
        let f_px_min = 1.0 / 64.0;
        let per_component_curvature = CURVATURE_BUDGET / SINUSOIDS_PER_CHANNEL as f64;

        let mut channels = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut comps = Vec::with_capacity(SINUSOIDS_PER_CHANNEL);
            let mut total_amp = 0.0;
            for _ in 0..SINUSOIDS_PER_CHANNEL {
                let f_px = f_px_min * (f_px_max / f_px_min).powf(rng.random::<f64>());
                let theta = rng.random::<f64>() * 2.0 * PI;
                let phase = rng.random::<f64>() * 2.0 * PI;
                // In pixel units the curvature of a*sin(2*pi*f_px*s) is
                // a*(2*pi*f_px)^2, so the amplitude follows from the budget.
                let amplitude = per_component_curvature / (2.0 * PI * f_px).powi(2);
                let f_m = f_px / meters_per_pixel;
                comps.push(Sinusoid {
                    amplitude,
                    freq_x: f_m * theta.cos(),
                    freq_y: f_m * theta.sin(),
                    phase,
                });
                total_amp += amplitude;
            }
            if total_amp > MAX_TOTAL_AMPLITUDE {
                let scale = MAX_TOTAL_AMPLITUDE / total_amp;
                for c in &mut comps {
                    c.amplitude *= scale;
                }
            }
            channels.push(comps);
        }
        Self { channels }
    }

    fn eval(&self, ch: usize, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for s in &self.channels[ch] {
            v += s.amplitude * (2.0 * PI * (s.freq_x * x + s.freq_y * y) + s.phase).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

/// Plane in reference-camera coordinates: z = offset + gx*x + gy*y.
#[derive(Debug, Clone, Copy)]
struct Plane {
    offset: f64,
    gx: f64,
    gy: f64,
}

impl Plane {
    // Normal form n.p = offset with n = (-gx, -gy, 1).
    fn normal(&self) -> Vector3<f64> {
        Vector3::new(-self.gx, -self.gy, 1.0)
    }
}

fn render_scene(
    k: &Intrinsics,
    plane: Plane,
    texture_seed: u64,
    poses: &[PoseSE3],
    dims: (usize, usize),
) -> Result<SynthScene, SynthError> {
    let (height, width) = dims;
    if height == 0 || width == 0 {
        return Err(SynthError::EmptyDims);
    }
    if plane.offset <= 0.0 {
        return Err(SynthError::NonPositivePlaneDepth(plane.offset));
    }
    let texture = PlaneTexture::seeded(texture_seed, k, plane.offset);
    let n = plane.normal();

    let mut frames = Vec::with_capacity(poses.len());
    for (frame_idx, pose) in poses.iter().enumerate() {
        // Rays are cast from this camera; the plane lives in reference
        // coordinates, so express the ray and origin there.
        let to_ref = pose.inverse();
        let r_ref = to_ref.rotation();
        let origin = to_ref.translation();
        let n_dot_origin = n.dot(origin);

        let mut image = vec![0.0; height * width * 3];
        let mut depth = vec![0.0; height * width];
        for row in 0..height {
            for col in 0..width {
                let ray_cam =
                    Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
                let ray_ref = r_ref * ray_cam;
                let denom = n.dot(&ray_ref);
                if denom.abs() < 1e-12 {
                    return Err(SynthError::PlaneBehindCamera {
                        frame: frame_idx,
                        row,
                        col,
                    });
                }
                // p_ref = origin + s * ray_ref with n.p_ref = offset.
                let s = (plane.offset - n_dot_origin) / denom;
                if s <= 0.0 {
                    return Err(SynthError::PlaneBehindCamera {
                        frame: frame_idx,
                        row,
                        col,
                    });
                }
                let p_ref = origin + ray_ref * s;
                let idx = row * width + col;
                depth[idx] = s; // ray_cam.z == 1, so camera depth equals s
                for ch in 0..3 {
                    image[idx * 3 + ch] = texture.eval(ch, p_ref.x, p_ref.y);
                }
            }
        }
        frames.push(SynthFrame {
            image: ImageBuf::new(height, width, 3, image).expect("texture is clamped to [0,1]"),
            depth: DepthMap::new(height, width, depth, vec![true; height * width])
                .expect("plane depth is positive"),
            pose_from_ref: pose.clone(),
        });
    }
    Ok(SynthScene {
        frames,
        intrinsics: *k,
        seed: texture_seed,
    })
}

/// Renders a fronto-parallel textured plane at `plane_depth` meters.
///
/// `poses[i]` maps reference-camera coordinates into frame i's camera; the
/// reference view itself is whichever pose is the identity (conventionally
/// the first).
pub fn generate_plane_scene(
    k: &Intrinsics,
    plane_depth: f64,
    texture_seed: u64,
    poses: &[PoseSE3],
    dims: (usize, usize),
) -> Result<SynthScene, SynthError> {
    render_scene(
        k,
        Plane {
            offset: plane_depth,
            gx: 0.0,
            gy: 0.0,
        },
        texture_seed,
        poses,
        dims,
    )
}

/// Renders a slanted plane z = base_depth + gx*x + gy*y (reference-camera
/// coordinates), so depth varies across the image and identity-pose
/// degeneracies cannot hide depth errors.
pub fn generate_slanted_scene(
    k: &Intrinsics,
    base_depth: f64,
    slope: (f64, f64),
    texture_seed: u64,
    poses: &[PoseSE3],
    dims: (usize, usize),
) -> Result<SynthScene, SynthError> {
    render_scene(
        k,
        Plane {
            offset: base_depth,
            gx: slope.0,
            gy: slope.1,
        },
        texture_seed,
        poses,
        dims,
    )
}

/// Teacher-style corruption models applied to a depth map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionModel {
    /// Multiply every valid depth by the magnitude (1.0 is the identity).
    Scale,
    /// Add seeded zero-mean Gaussian noise with stddev = magnitude meters,
    /// clamped to keep depth positive.
    AdditiveNoise,
    /// Invalidate a seeded fraction (= magnitude) of the valid pixels.
    Holes,
}

/// Applies one corruption model; the result is reproducible from the seed.
pub fn corrupt_depth(
    depth: &DepthMap,
    model: CorruptionModel,
    magnitude: f64,
    seed: u64,
) -> Result<DepthMap, SynthError> {
    if magnitude.is_nan() || magnitude < 0.0 {
        return Err(SynthError::NegativeMagnitude(magnitude));
    }
    let h = depth.height();
    let w = depth.width();
    let mut d = depth.depths().to_vec();
    let mut v = depth.valid().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match model {
        CorruptionModel::Scale => {
            if magnitude <= 0.0 {
                return Err(SynthError::NonPositiveScale(magnitude));
            }
            for (di, &vi) in d.iter_mut().zip(v.iter()) {
                if vi {
                    *di *= magnitude;
                }
            }
        }
        CorruptionModel::AdditiveNoise => {
            let normal =
                Normal::new(0.0, magnitude.max(f64::MIN_POSITIVE)).expect("stddev validated above");
            for (di, &vi) in d.iter_mut().zip(v.iter()) {
                if vi && magnitude > 0.0 {
                    *di = (*di + normal.sample(&mut rng)).max(MIN_CORRUPTED_DEPTH);
                }
            }
        }
        CorruptionModel::Holes => {
            if magnitude >= 1.0 {
                return Err(SynthError::AllPixelsInvalidated);
            }
            for (di, vi) in d.iter_mut().zip(v.iter_mut()) {
                if *vi && rng.random::<f64>() < magnitude {
                    *vi = false;
                    *di = 0.0;
                }
            }
            if !v.iter().any(|&x| x) {
                return Err(SynthError::AllPixelsInvalidated);
            }
        }
    }
    Ok(DepthMap::new(h, w, d, v).expect("corruptions preserve map invariants"))
}

/// Seeded uniform subsampling of the valid pixels down to `keep_fraction`.
pub fn sparsify(depth: &DepthMap, keep_fraction: f64, seed: u64) -> Result<DepthMap, SynthError> {
    if keep_fraction.is_nan() || keep_fraction <= 0.0 || keep_fraction > 1.0 {
        return Err(SynthError::BadKeepFraction(keep_fraction));
    }
    if depth.valid_count() == 0 {
        return Err(SynthError::NoValidPixels);
    }
    if keep_fraction == 1.0 {
        return Ok(depth.clone());
    }
    let mut d = depth.depths().to_vec();
    let mut v = depth.valid().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (di, vi) in d.iter_mut().zip(v.iter_mut()) {
        if *vi && rng.random::<f64>() >= keep_fraction {
            *vi = false;
            *di = 0.0;
        }
    }
    Ok(DepthMap::new(depth.height(), depth.width(), d, v).expect("subsampling keeps invariants"))
}
