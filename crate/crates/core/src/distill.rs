//! Monitored ensemble distillation: score each teacher depth map by the
//! reprojection error of the images it reconstructs, select the per-pixel
//! best completion teacher, and replace values where a stereo teacher does
//! strictly better.
//!
//! Selection is hard: every distilled depth value is drawn bitwise from some
//! input teacher, never blended. Teachers with no valid depth at a pixel are
//! excluded from the argmin rather than assigned infinite error, so masks
//! propagate honestly.

use thiserror::Error;

use crate::geometry::{warp_with_jacobian, Intrinsics};
use crate::grid::{DepthMap, GridError, ImageBuf, Mask};
use crate::losses::{
    min_reprojection, photometric_map, ssim_map, LossError, LossMap, LossWeights, SourceView,
};

/// Default scale of the error-to-confidence mapping exp(-error/sigma).
pub const DEFAULT_CONFIDENCE_SIGMA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("teacher set must contain at least one entry")]
    EmptyTeacherSet,
    #[error("duplicate teacher name {0:?}")]
    DuplicateTeacherName(String),
    #[error("teacher {name:?} is {got_h}x{got_w}, expected {expected_h}x{expected_w}")]
    TeacherDimensionMismatch {
        name: String,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("{errors} error maps for {teachers} teachers")]
    ErrorCountMismatch { teachers: usize, errors: usize },
    #[error("error map {index} is {got_h}x{got_w}, expected {expected_h}x{expected_w}")]
    ErrorMapDimensionMismatch {
        index: usize,
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("confidence sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("selection index {index} out of range for {teachers} teachers")]
    SelectionOutOfRange { index: usize, teachers: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Whether a teacher is a depth-completion network or a stereo matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    Completion,
    Stereo,
}

/// One teacher's dense depth prediction.
#[derive(Debug, Clone)]
pub struct TeacherEntry {
    pub name: String,
    pub depth: DepthMap,
    pub kind: TeacherKind,
}

/// The teacher ensemble; entries share dimensions and carry unique names.
#[derive(Debug, Clone)]
pub struct TeacherSet {
    entries: Vec<TeacherEntry>,
}

impl TeacherSet {
    pub fn new(entries: Vec<TeacherEntry>) -> Result<Self, DistillError> {
        let first = entries.first().ok_or(DistillError::EmptyTeacherSet)?;
        let (h, w) = (first.depth.height(), first.depth.width());
        for (i, e) in entries.iter().enumerate() {
            if e.depth.height() != h || e.depth.width() != w {
                return Err(DistillError::TeacherDimensionMismatch {
                    name: e.name.clone(),
                    expected_h: h,
                    expected_w: w,
                    got_h: e.depth.height(),
                    got_w: e.depth.width(),
                });
            }
            if entries[..i].iter().any(|prev| prev.name == e.name) {
                return Err(DistillError::DuplicateTeacherName(e.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TeacherEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn height(&self) -> usize {
        self.entries[0].depth.height()
    }

    pub fn width(&self) -> usize {
        self.entries[0].depth.width()
    }

    /// Index of the first stereo entry, if any.
    pub fn stereo_index(&self) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.kind == TeacherKind::Stereo)
    }
}

/// Per-teacher reprojection error: the per-pixel combined photometric plus
/// structure loss, minimized over source views.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    pub teacher: String,
    map: LossMap,
}

impl ErrorMap {
    pub fn new(teacher: String, map: LossMap) -> Self {
        Self { teacher, map }
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn values(&self) -> &[f64] {
        self.map.values()
    }

    pub fn valid(&self) -> &Mask {
        self.map.valid()
    }

    pub fn map(&self) -> &LossMap {
        &self.map
    }
}

/// The distilled result: hard-selected depth, confidence in [0, 1], and the
/// per-pixel index of the chosen teacher (None where no teacher was valid).
#[derive(Debug, Clone)]
pub struct DistilledDepth {
    pub depth: DepthMap,
    pub confidence: Vec<f64>,
    pub selection: Vec<Option<usize>>,
}

/// Shrinks a warp mask to pixels whose whole clamped 3x3 window is valid.
///
/// Teacher errors are only comparable across teachers when the structure
/// term is computed over the same window support: without this, a teacher
/// with holes scores its SSIM over fewer contributors near them and can win
/// the argmin by having less evidence rather than better depth.
fn erode_to_full_windows(mask: &Mask) -> Mask {
    let h = mask.height();
    let w = mask.width();
    let mut out = vec![false; h * w];
    for row in 0..h {
        let r0 = row.saturating_sub(1);
        let r1 = (row + 1).min(h - 1);
        'cols: for col in 0..w {
            let c0 = col.saturating_sub(1);
            let c1 = (col + 1).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if !mask.get(r, c) {
                        continue 'cols;
                    }
                }
            }
            out[row * w + col] = true;
        }
    }
    Mask::new(h, w, out).expect("mask dims preserved")
}

/// Scores every teacher: each source view is warped into the target with the
/// teacher's depth, the combined per-pixel error w_ph*photometric +
/// w_st*structure is formed, and the per-pixel minimum over sources is taken.
/// A pixel is valid in a teacher's map iff the teacher's depth is valid there
/// and at least one source reprojects in bounds with a fully valid SSIM
/// window around the pixel.
pub fn teacher_error_maps(
    teachers: &TeacherSet,
    target: &ImageBuf,
    sources: &[SourceView<'_>],
    k: &Intrinsics,
    weights: &LossWeights,
) -> Result<Vec<ErrorMap>, DistillError> {
    if sources.is_empty() {
        return Err(DistillError::Loss(LossError::EmptySources));
    }
    let h = target.height();
    let w = target.width();
    let mut out = Vec::with_capacity(teachers.len());
    for entry in teachers.entries() {
        let mut combined = Vec::with_capacity(sources.len());
        for src in sources {
            let field = warp_with_jacobian(src.image, &entry.depth, k, src.pose_from_target)
                .map_err(LossError::from)?;
            let ph = photometric_map(target, &field.recon, &field.valid)?;
            let st = ssim_map(target, &field.recon, &field.valid)?;
            let values: Vec<f64> = ph
                .values()
                .iter()
                .zip(st.values())
                .map(|(&p, &s)| weights.combine(p, s))
                .collect();
            combined.push(LossMap::new(
                h,
                w,
                values,
                erode_to_full_windows(&field.valid),
            )?);
        }
        let min = min_reprojection(&combined)?;
        out.push(ErrorMap::new(entry.name.clone(), min));
    }
    Ok(out)
}

fn check_aligned(teachers: &TeacherSet, errors: &[ErrorMap]) -> Result<(), DistillError> {
    if errors.len() != teachers.len() {
        return Err(DistillError::ErrorCountMismatch {
            teachers: teachers.len(),
            errors: errors.len(),
        });
    }
    for (i, e) in errors.iter().enumerate() {
        if e.height() != teachers.height() || e.width() != teachers.width() {
            return Err(DistillError::ErrorMapDimensionMismatch {
                index: i,
                expected_h: teachers.height(),
                expected_w: teachers.width(),
                got_h: e.height(),
                got_w: e.width(),
            });
        }
    }
    Ok(())
}

#[inline]
fn confidence_from_error(error: f64, sigma: f64) -> f64 {
    (-error / sigma).exp()
}

/// Selects, per pixel, the completion teacher with minimum error (ties break
/// to the lowest teacher index). Returns the distilled depth together with
/// the error map of the selected teacher, which feeds [`stereo_fuse`].
///
/// `errors` must be aligned with `teachers.entries()`; stereo entries are
/// ignored here and fused afterwards.
pub fn ensemble_select(
    teachers: &TeacherSet,
    errors: &[ErrorMap],
    sigma: f64,
) -> Result<(DistilledDepth, ErrorMap), DistillError> {
    check_aligned(teachers, errors)?;
    if sigma.is_nan() || sigma <= 0.0 || sigma.is_infinite() {
        return Err(DistillError::BadSigma(sigma));
    }
    let h = teachers.height();
    let w = teachers.width();
    let n = h * w;

    let mut depth = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut confidence = vec![0.0; n];
    let mut selection: Vec<Option<usize>> = vec![None; n];
    let mut err_values = vec![0.0; n];
    let mut err_valid = vec![false; n];

    for idx in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (t, (entry, emap)) in teachers.entries().iter().zip(errors.iter()).enumerate() {
            if entry.kind != TeacherKind::Completion {
                continue;
            }
            if !entry.depth.valid()[idx] || !emap.valid().at(idx) {
                continue;
            }
            let e = emap.values()[idx];
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((t, e));
            }
        }
        if let Some((t, e)) = best {
            depth[idx] = teachers.entries()[t].depth.depths()[idx];
            valid[idx] = true;
            confidence[idx] = confidence_from_error(e, sigma);
            selection[idx] = Some(t);
            err_values[idx] = e;
            err_valid[idx] = true;
        }
    }

    let distilled = DistilledDepth {
        depth: DepthMap::new(h, w, depth, valid)?,
        confidence,
        selection,
    };
    let err_map = ErrorMap::new(
        "distilled".to_string(),
        LossMap::new(h, w, err_values, Mask::new(h, w, err_valid)?)?,
    );
    Ok((distilled, err_map))
}

/// Replaces distilled values with the stereo teacher's wherever the stereo
/// error is strictly lower (or the distilled map has no value at all); all
/// other pixels are unchanged. Equal errors keep the completion result.
pub fn stereo_fuse(
    distilled: &DistilledDepth,
    distilled_errors: &ErrorMap,
    stereo: &DepthMap,
    stereo_error: &ErrorMap,
    stereo_index: usize,
    sigma: f64,
) -> Result<(DistilledDepth, ErrorMap), DistillError> {
    if sigma.is_nan() || sigma <= 0.0 || sigma.is_infinite() {
        return Err(DistillError::BadSigma(sigma));
    }
    let h = distilled.depth.height();
    let w = distilled.depth.width();
    for (gh, gw) in [
        (distilled_errors.height(), distilled_errors.width()),
        (stereo.height(), stereo.width()),
        (stereo_error.height(), stereo_error.width()),
    ] {
        if gh != h || gw != w {
            return Err(DistillError::ErrorMapDimensionMismatch {
                index: 0,
                expected_h: h,
                expected_w: w,
                got_h: gh,
                got_w: gw,
            });
        }
    }
    let n = h * w;
    let mut depth = distilled.depth.depths().to_vec();
    let mut valid = distilled.depth.valid().to_vec();
    let mut confidence = distilled.confidence.clone();
    let mut selection = distilled.selection.clone();
    let mut err_values = distilled_errors.values().to_vec();
    let mut err_valid = distilled_errors.valid().data().to_vec();

    for idx in 0..n {
        if !stereo.valid()[idx] || !stereo_error.valid().at(idx) {
            continue;
        }
        let se = stereo_error.values()[idx];
        let take = if err_valid[idx] {
            se < err_values[idx]
        } else {
            true
        };
        if take {
            depth[idx] = stereo.depths()[idx];
            valid[idx] = true;
            confidence[idx] = confidence_from_error(se, sigma);
            selection[idx] = Some(stereo_index);
            err_values[idx] = se;
            err_valid[idx] = true;
        }
    }

    let fused = DistilledDepth {
        depth: DepthMap::new(h, w, depth, valid)?,
        confidence,
        selection,
    };
    let err_map = ErrorMap::new(
        "fused".to_string(),
        LossMap::new(h, w, err_values, Mask::new(h, w, err_valid)?)?,
    );
    Ok((fused, err_map))
}

/// Fraction of selected pixels attributed to each teacher, in teacher order.
/// Fractions are over pixels with a selection and sum to 1 when any pixel is
/// selected; unselected teachers report 0.
pub fn selection_histogram(
    distilled: &DistilledDepth,
    teachers: &TeacherSet,
) -> Result<Vec<(String, f64)>, DistillError> {
    let mut counts = vec![0usize; teachers.len()];
    let mut total = 0usize;
    for sel in &distilled.selection {
        if let Some(t) = *sel {
            if t >= teachers.len() {
                return Err(DistillError::SelectionOutOfRange {
                    index: t,
                    teachers: teachers.len(),
                });
            }
            counts[t] += 1;
            total += 1;
        }
    }
    Ok(teachers
        .entries()
        .iter()
        .zip(counts.iter())
        .map(|(e, &c)| {
            let frac = if total == 0 {
                0.0
            } else {
                c as f64 / total as f64
            };
            (e.name.clone(), frac)
        })
        .collect())
}
