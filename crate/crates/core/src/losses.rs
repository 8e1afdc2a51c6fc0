//! Photometric and structure (SSIM) losses, per-pixel multi-view minimum,
//! multi-scale aggregation, and the analytic gradient of the combined loss
//! with respect to predicted depth.
//!
//! All scalar reductions are means over valid pixels; an all-invalid mask
//! yields loss 0 with a valid-pixel count of 0, never NaN. The per-pixel
//! minimum over source views skips invalid contributors instead of treating
//! them as zero.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{warp_with_jacobian, GeometryError, Intrinsics, PoseSE3, WarpField};
use crate::grid::{upsample_to, DepthMap, GridError, ImageBuf, Mask, Pyramid};

/// SSIM stabilization constants for unit dynamic range: (0.01)^2, (0.03)^2.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// SSIM window half-extent; the window is (2*R+1) x (2*R+1) = 3x3.
const SSIM_RADIUS: usize = 1;
const SSIM_WINDOW: usize = 2 * SSIM_RADIUS + 1;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("dimension mismatch: {expected_h}x{expected_w} vs {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("channel count mismatch: {expected} vs {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("image {h}x{w} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { h: usize, w: usize, window: usize },
    #[error("min_reprojection requires at least one map")]
    EmptyMapList,
    #[error("at least one source view is required")]
    EmptySources,
    #[error("at least two frames are required for multi-view consistency")]
    TooFewFrames,
    #[error("missing relative pose for ordered frame pair ({x}, {y})")]
    MissingPose { x: usize, y: usize },
    #[error("{weights} scale weights for {levels} pyramid levels")]
    WeightCountMismatch { weights: usize, levels: usize },
    #[error("pose count {poses} does not match source count {sources}")]
    PoseCountMismatch { poses: usize, sources: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// How the per-pixel minimum over source views combines the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinMode {
    /// Minimize photometric and structure maps independently per pixel.
    Separate,
    /// Pick the source minimizing the combined loss, then split for reporting.
    Joint,
}

/// Loss-term weights and the minimum-reprojection mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub photometric: f64,
    pub structure: f64,
    pub min_mode: MinMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photometric: 0.15,
            structure: 0.85,
            min_mode: MinMode::Separate,
        }
    }
}

impl LossWeights {
    pub fn combine(&self, photometric: f64, structure: f64) -> f64 {
        self.photometric * photometric + self.structure * structure
    }
}

/// Per-pixel nonnegative loss with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    height: usize,
    width: usize,
    value: Vec<f64>,
    valid: Mask,
}

impl LossMap {
    pub fn new(
        height: usize,
        width: usize,
        value: Vec<f64>,
        valid: Mask,
    ) -> Result<Self, LossError> {
        if value.len() != height * width || valid.height() != height || valid.width() != width {
            return Err(LossError::DimensionMismatch {
                expected_h: height,
                expected_w: width,
                got_h: valid.height(),
                got_w: valid.width(),
            });
        }
        debug_assert!(value
            .iter()
            .zip(valid.data())
            .all(|(&v, &ok)| !ok || (v.is_finite() && v >= 0.0)));
        Ok(Self {
            height,
            width,
            value,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn valid(&self) -> &Mask {
        &self.valid
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.value[row * self.width + col]
    }

    /// Mean over valid pixels and their count; (0, 0) when nothing is valid.
    pub fn mean(&self) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, &ok) in self.value.iter().zip(self.valid.data()) {
            if ok {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            (0.0, 0)
        } else {
            (sum / n as f64, n)
        }
    }

    fn same_dims(&self, other: &LossMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Scalar loss terms, optionally per pyramid scale.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub structure: f64,
    pub per_scale: Vec<ScaleLoss>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScaleLoss {
    pub scale: usize,
    pub photometric: f64,
    pub structure: f64,
}

fn check_pair(target: &ImageBuf, recon: &ImageBuf, valid: &Mask) -> Result<(), LossError> {
    if target.height() != recon.height() || target.width() != recon.width() {
        return Err(LossError::DimensionMismatch {
            expected_h: target.height(),
            expected_w: target.width(),
            got_h: recon.height(),
            got_w: recon.width(),
        });
    }
    if target.channels() != recon.channels() {
        return Err(LossError::ChannelMismatch {
            expected: target.channels(),
            got: recon.channels(),
        });
    }
    if valid.height() != target.height() || valid.width() != target.width() {
        return Err(LossError::DimensionMismatch {
            expected_h: target.height(),
            expected_w: target.width(),
            got_h: valid.height(),
            got_w: valid.width(),
        });
    }
    Ok(())
}

/// Per-pixel mean-over-channels absolute difference, masked by `valid`.
pub fn photometric_map(
    target: &ImageBuf,
    recon: &ImageBuf,
    valid: &Mask,
) -> Result<LossMap, LossError> {
    check_pair(target, recon, valid)?;
    let h = target.height();
    let w = target.width();
    let c = target.channels();
    let mut value = vec![0.0; h * w];
    for idx in 0..h * w {
        if !valid.at(idx) {
            continue;
        }
        let mut sum = 0.0;
        for ch in 0..c {
            sum += (target.data()[idx * c + ch] - recon.data()[idx * c + ch]).abs();
        }
        value[idx] = sum / c as f64;
    }
    LossMap::new(h, w, value, valid.clone())
}

/// Windowed statistics over the valid pixels of a clamped 3x3 neighborhood.
struct WindowStats {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

#[inline]
fn window_range(center: usize, limit: usize) -> (usize, usize) {
    let lo = center.saturating_sub(SSIM_RADIUS);
    let hi = (center + SSIM_RADIUS).min(limit - 1);
    (lo, hi)
}

fn ssim_window_stats(
    target: &ImageBuf,
    recon: &ImageBuf,
    valid: &Mask,
    row: usize,
    col: usize,
    ch: usize,
) -> WindowStats {
    let (r0, r1) = window_range(row, target.height());
    let (c0, c1) = window_range(col, target.width());
    let mut n = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            if !valid.get(r, c) {
                continue;
            }
            let x = target.get(r, c, ch);
            let y = recon.get(r, c, ch);
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    }
    let mean_x = sx / n;
    let mean_y = sy / n;
    WindowStats {
        n,
        mean_x,
        mean_y,
        var_x: sxx / n - mean_x * mean_x,
        var_y: syy / n - mean_y * mean_y,
        cov: sxy / n - mean_x * mean_y,
    }
}

#[inline]
fn ssim_from_stats(s: &WindowStats) -> f64 {
    let a1 = 2.0 * s.mean_x * s.mean_y + SSIM_C1;
    let a2 = 2.0 * s.cov + SSIM_C2;
    let b1 = s.mean_x * s.mean_x + s.mean_y * s.mean_y + SSIM_C1;
    let b2 = s.var_x + s.var_y + SSIM_C2;
    (a1 * a2) / (b1 * b2)
}

/// Per-pixel structural dissimilarity (1 - SSIM)/2 in [0, 1], mean over
/// channels. SSIM uses a 3x3 mean filter over the valid pixels of the
/// clamped window, so invalid neighbors never contaminate the statistics.
pub fn ssim_map(target: &ImageBuf, recon: &ImageBuf, valid: &Mask) -> Result<LossMap, LossError> {
    check_pair(target, recon, valid)?;
    let h = target.height();
    let w = target.width();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LossError::ImageTooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let c = target.channels();
    let mut value = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if !valid.at(idx) {
                continue;
            }
            let mut loss = 0.0;
            for ch in 0..c {
                let stats = ssim_window_stats(target, recon, valid, row, col, ch);
                loss += (1.0 - ssim_from_stats(&stats)) / 2.0;
            }
            value[idx] = (loss / c as f64).clamp(0.0, 1.0);
        }
    }
    LossMap::new(h, w, value, valid.clone())
}

/// Per-pixel minimum over maps; invalid contributors are skipped and a pixel
/// is valid in the output iff it is valid in at least one input.
pub fn min_reprojection(maps: &[LossMap]) -> Result<LossMap, LossError> {
    let first = maps.first().ok_or(LossError::EmptyMapList)?;
    for m in maps {
        if !first.same_dims(m) {
            return Err(LossError::DimensionMismatch {
                expected_h: first.height,
                expected_w: first.width,
                got_h: m.height,
                got_w: m.width,
            });
        }
    }
    let n = first.height * first.width;
    let mut value = vec![0.0; n];
    let mut valid = vec![false; n];
    for idx in 0..n {
        let mut best = f64::INFINITY;
        let mut any = false;
        for m in maps {
            if m.valid.at(idx) && m.value[idx] < best {
                best = m.value[idx];
                any = true;
            }
        }
        if any {
            value[idx] = best;
            valid[idx] = true;
        }
    }
    LossMap::new(
        first.height,
        first.width,
        value,
        Mask::new(first.height, first.width, valid)?,
    )
}

/// A source view paired with the pose mapping target-camera coordinates into
/// its own camera (`p_src = R * p_tgt + t`).
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    pub image: &'a ImageBuf,
    pub pose_from_target: &'a PoseSE3,
}

/// Warps every source into the target and reduces with the configured
/// per-pixel minimum; returns the minimized (photometric, structure) maps.
pub fn min_reprojection_maps(
    target: &ImageBuf,
    depth: &DepthMap,
    sources: &[SourceView<'_>],
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<(LossMap, LossMap), LossError> {
    if sources.is_empty() {
        return Err(LossError::EmptySources);
    }
    let mut ph_maps = Vec::with_capacity(sources.len());
    let mut st_maps = Vec::with_capacity(sources.len());
    for src in sources {
        let field = warp_with_jacobian(src.image, depth, k, src.pose_from_target)?;
        ph_maps.push(photometric_map(target, &field.recon, &field.valid)?);
        st_maps.push(ssim_map(target, &field.recon, &field.valid)?);
    }
    match weights.min_mode {
        MinMode::Separate => Ok((min_reprojection(&ph_maps)?, min_reprojection(&st_maps)?)),
        MinMode::Joint => {
            let h = target.height();
            let w = target.width();
            let n = h * w;
            let mut ph = vec![0.0; n];
            let mut st = vec![0.0; n];
            let mut valid = vec![false; n];
            for idx in 0..n {
                let mut best = f64::INFINITY;
                let mut pick = None;
                for (j, (pm, sm)) in ph_maps.iter().zip(st_maps.iter()).enumerate() {
                    if !pm.valid.at(idx) {
                        continue;
                    }
                    let combined = weights.combine(pm.value[idx], sm.value[idx]);
                    if combined < best {
                        best = combined;
                        pick = Some(j);
                    }
                }
                if let Some(j) = pick {
                    ph[idx] = ph_maps[j].value[idx];
                    st[idx] = st_maps[j].value[idx];
                    valid[idx] = true;
                }
            }
            let mask = Mask::new(h, w, valid)?;
            Ok((
                LossMap::new(h, w, ph, mask.clone())?,
                LossMap::new(h, w, st, mask)?,
            ))
        }
    }
}

/// Scalar breakdown of the minimized reprojection loss for one target view
/// against a set of source views.
pub fn reprojection_loss(
    target: &ImageBuf,
    depth: &DepthMap,
    sources: &[SourceView<'_>],
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    let (ph_map, st_map) = min_reprojection_maps(target, depth, sources, k, weights)?;
    let (ph, _) = ph_map.mean();
    let (st, _) = st_map.mean();
    Ok(LossBreakdown {
        photometric: ph,
        structure: st,
        per_scale: Vec::new(),
        total: weights.combine(ph, st),
    })
}

/// Relative poses between ordered frame pairs, `get(x, y)` mapping frame x's
/// camera coordinates into frame y's.
#[derive(Debug, Clone, Default)]
pub struct PosePairs {
    rel: HashMap<(usize, usize), PoseSE3>,
}

impl PosePairs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, x: usize, y: usize, pose: PoseSE3) {
        self.rel.insert((x, y), pose);
    }

    /// Derives every ordered pair from per-frame poses relative to a common
    /// reference: `poses[i]` maps reference coordinates into frame i, so
    /// `T(x -> y) = poses[y] * poses[x]^-1`.
    pub fn from_reference_poses(poses: &[PoseSE3]) -> Self {
        let mut rel = HashMap::new();
        for (x, px) in poses.iter().enumerate() {
            let inv = px.inverse();
            for (y, py) in poses.iter().enumerate() {
                if x != y {
                    rel.insert((x, y), py.compose(&inv));
                }
            }
        }
        Self { rel }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&PoseSE3> {
        self.rel.get(&(x, y))
    }
}

/// One frame of a multi-view set: its image and its predicted depth.
#[derive(Debug, Clone, Copy)]
pub struct ViewFrame<'a> {
    pub image: &'a ImageBuf,
    pub depth: &'a DepthMap,
}

/// Depth-consistency loss over all ordered frame pairs: each frame in turn is
/// the target, every other frame is warped into it with the target's depth,
/// and the per-pixel minimum over those reconstructions is reduced to a mean.
/// Frame-level means are averaged so the result is independent of resolution
/// and frame count.
pub fn multiview_consistency_loss(
    frames: &[ViewFrame<'_>],
    poses: &PosePairs,
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    if frames.len() < 2 {
        return Err(LossError::TooFewFrames);
    }
    let mut ph_sum = 0.0;
    let mut st_sum = 0.0;
    for (x, frame) in frames.iter().enumerate() {
        let mut sources = Vec::with_capacity(frames.len() - 1);
        for (y, other) in frames.iter().enumerate() {
            if x == y {
                continue;
            }
            let pose = poses.get(x, y).ok_or(LossError::MissingPose { x, y })?;
            sources.push(SourceView {
                image: other.image,
                pose_from_target: pose,
            });
        }
        let (ph_map, st_map) =
            min_reprojection_maps(frame.image, frame.depth, &sources, k, weights)?;
        ph_sum += ph_map.mean().0;
        st_sum += st_map.mean().0;
    }
    let photometric = ph_sum / frames.len() as f64;
    let structure = st_sum / frames.len() as f64;
    Ok(LossBreakdown {
        photometric,
        structure,
        per_scale: Vec::new(),
        total: weights.combine(photometric, structure),
    })
}

/// Multi-scale reprojection loss: every pyramid level is upsampled
/// (nearest-neighbor) to full resolution and evaluated against the
/// full-resolution target, then the levels are combined with `scale_weights`.
pub fn multiscale_loss(
    depth_pyramid: &Pyramid<DepthMap>,
    target: &ImageBuf,
    sources: &[&ImageBuf],
    poses: &[PoseSE3],
    k: &Intrinsics,
    scale_weights: &[f64],
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    if sources.is_empty() {
        return Err(LossError::EmptySources);
    }
    if poses.len() != sources.len() {
        return Err(LossError::PoseCountMismatch {
            poses: poses.len(),
            sources: sources.len(),
        });
    }
    if scale_weights.len() != depth_pyramid.num_levels() {
        return Err(LossError::WeightCountMismatch {
            weights: scale_weights.len(),
            levels: depth_pyramid.num_levels(),
        });
    }
    let views: Vec<SourceView<'_>> = sources
        .iter()
        .zip(poses.iter())
        .map(|(image, pose)| SourceView {
            image,
            pose_from_target: pose,
        })
        .collect();

    let mut photometric = 0.0;
    let mut structure = 0.0;
    let mut per_scale = Vec::with_capacity(depth_pyramid.num_levels());
    for (scale, (level, &sw)) in depth_pyramid
        .levels()
        .iter()
        .zip(scale_weights.iter())
        .enumerate()
    {
        let full = upsample_to(level, target.height(), target.width())?;
        let (ph_map, st_map) = min_reprojection_maps(target, &full, &views, k, weights)?;
        let ph = ph_map.mean().0;
        let st = st_map.mean().0;
        per_scale.push(ScaleLoss {
            scale,
            photometric: ph,
            structure: st,
        });
        photometric += sw * ph;
        structure += sw * st;
    }
    Ok(LossBreakdown {
        photometric,
        structure,
        per_scale,
        total: weights.combine(photometric, structure),
    })
}

/// Per-pixel partial derivative of the combined scalar loss with respect to
/// each valid depth value.
#[derive(Debug, Clone)]
pub struct DepthGradient {
    height: usize,
    width: usize,
    value: Vec<f64>,
}

impl DepthGradient {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.value[row * self.width + col]
    }
}

/// The scalar loss the analytic gradient differentiates: one target, one
/// source, no per-pixel minimum.
pub fn reprojection_scalar_loss(
    depth: &DepthMap,
    target: &ImageBuf,
    source: &ImageBuf,
    pose: &PoseSE3,
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<f64, LossError> {
    let field = warp_with_jacobian(source, depth, k, pose)?;
    let ph = photometric_map(target, &field.recon, &field.valid)?;
    let st = ssim_map(target, &field.recon, &field.valid)?;
    Ok(weights.combine(ph.mean().0, st.mean().0))
}

/// Analytic d(loss)/d(depth) of [`reprojection_scalar_loss`], chaining through
/// projection and bilinear sampling. Zero at invalid pixels and wherever the
/// reprojection leaves the source image.
pub fn loss_gradient_wrt_depth(
    depth: &DepthMap,
    target: &ImageBuf,
    source: &ImageBuf,
    pose: &PoseSE3,
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<DepthGradient, LossError> {
    let h = depth.height();
    let w = depth.width();
    let c = target.channels();
    let field: WarpField = warp_with_jacobian(source, depth, k, pose)?;
    check_pair(target, &field.recon, &field.valid)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LossError::ImageTooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }

    let n_valid = field.valid.count();
    let mut grad = vec![0.0; h * w];
    if n_valid == 0 {
        return Ok(DepthGradient {
            height: h,
            width: w,
            value: grad,
        });
    }
    let norm = 1.0 / (n_valid as f64 * c as f64);
    let recon = &field.recon;

    // Adjoint dL/d(recon) accumulated per pixel and channel.
    let mut adj = vec![[0.0f64; 3]; h * w];

    // Photometric term: d|x - y|/dy = sign(y - x).
    for idx in 0..h * w {
        if !field.valid.at(idx) {
            continue;
        }
        for ch in 0..c {
            let diff = recon.data()[idx * c + ch] - target.data()[idx * c + ch];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            adj[idx][ch] += weights.photometric * norm * sign;
        }
    }

    // Structure term: each valid center's window couples every valid
    // contributor, so scatter d(ssim)/d(y_p) into the adjoint.
    for row in 0..h {
        for col in 0..w {
            if !field.valid.get(row, col) {
                continue;
            }
            let (r0, r1) = window_range(row, h);
            let (c0, c1) = window_range(col, w);
            for ch in 0..c {
                let s = ssim_window_stats(target, recon, &field.valid, row, col, ch);
                let a1 = 2.0 * s.mean_x * s.mean_y + SSIM_C1;
                let a2 = 2.0 * s.cov + SSIM_C2;
                let b1 = s.mean_x * s.mean_x + s.mean_y * s.mean_y + SSIM_C1;
                let b2 = s.var_x + s.var_y + SSIM_C2;
                let ssim = (a1 * a2) / (b1 * b2);
                // Loss contribution is w_st * norm * (1 - ssim)/2.
                let scale = -0.5 * weights.structure * norm;
                for r in r0..=r1 {
                    for cc in c0..=c1 {
                        if !field.valid.get(r, cc) {
                            continue;
                        }
                        let x_p = target.get(r, cc, ch);
                        let y_p = recon.get(r, cc, ch);
                        let d_mean_y = 1.0 / s.n;
                        let d_var_y = 2.0 * (y_p - s.mean_y) / s.n;
                        let d_cov = (x_p - s.mean_x) / s.n;
                        let d_a1 = 2.0 * s.mean_x * d_mean_y;
                        let d_a2 = 2.0 * d_cov;
                        let d_b1 = 2.0 * s.mean_y * d_mean_y;
                        let d_b2 = d_var_y;
                        let d_ssim =
                            (d_a1 * a2 + a1 * d_a2) / (b1 * b2) - ssim * (d_b1 / b1 + d_b2 / b2);
                        adj[r * w + cc][ch] += scale * d_ssim;
                    }
                }
            }
        }
    }

    // Chain through bilinear sampling and the projection Jacobian.
    for idx in 0..h * w {
        if !field.valid.at(idx) {
            continue;
        }
        let (du_dd, dv_dd) = field.duv_dd[idx];
        let mut g = 0.0;
        for ch in 0..c {
            let (dc_du, dc_dv) = field.dcolor_duv[idx][ch];
            g += adj[idx][ch] * (dc_du * du_dd + dc_dv * dv_dd);
        }
        grad[idx] = g;
    }

    Ok(DepthGradient {
        height: h,
        width: w,
        value: grad,
    })
}
