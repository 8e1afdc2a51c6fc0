//! Pinhole camera model, rigid poses, and inverse image warping.
//!
//! The warp samples the *source* view at the coordinates induced by the
//! *target's* depth: each target pixel is backprojected with its depth,
//! transformed by the target-to-source pose, projected into the source, and
//! bilinearly sampled. Poses follow the convention `p_src = R * p_tgt + t`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::grid::{bilinear_sample_with_grad, DepthMap, ImageBuf, Mask};

/// Points with camera-space z below this are treated as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

const ROTATION_STRICT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("focal length must be positive and finite, got fx={fx}, fy={fy}")]
    BadFocal { fx: f64, fy: f64 },
    #[error("principal point must be finite, got cx={cx}, cy={cy}")]
    BadPrincipalPoint { cx: f64, cy: f64 },
    #[error(
        "matrix is not a rotation within tolerance {tol} (orthonormality residual {residual})"
    )]
    NotARotation { residual: f64, tol: f64 },
    #[error("matrix has determinant {det}, a rotation requires +1")]
    Reflection { det: f64 },
    #[error("backprojection requires depth > 0, got {0}")]
    NonPositiveDepth(f64),
    #[error("image {img_h}x{img_w} does not match depth {depth_h}x{depth_w}")]
    DimensionMismatch {
        img_h: usize,
        img_w: usize,
        depth_h: usize,
        depth_w: usize,
    },
}

/// Pinhole intrinsics shared by all views of a rectified sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fy.is_finite()) || fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::BadFocal { fx, fy });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::BadPrincipalPoint { cx, cy });
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid transform `p' = R * p + t`, rotation orthonormal with det +1.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    /// Validates orthonormality and determinant to 1e-9 and stores the matrix
    /// as given (no silent re-orthonormalization at this tolerance).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if residual > ROTATION_STRICT_TOL {
            return Err(GeometryError::NotARotation {
                residual,
                tol: ROTATION_STRICT_TOL,
            });
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_STRICT_TOL {
            return Err(GeometryError::Reflection { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Accepts a matrix within `tol` of a rotation and projects it onto the
    /// nearest rotation (polar factor via SVD). Rejects reflections.
    pub fn from_matrix_nearest(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tol: f64,
    ) -> Result<Self, GeometryError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if residual > tol || !rotation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation { residual, tol });
        }
        let det = rotation.determinant();
        if det < 0.0 {
            return Err(GeometryError::Reflection { det });
        }
        let svd = rotation.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis of least singular value to stay in SO(3).
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self::new(r, translation)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about the given axis (radians), plus translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation =
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
                .into_inner();
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.transpose();
        Self {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// Composition: `(self.compose(other))(p) == self(other(p))`.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Matrix3::identity()).norm() <= tol && self.translation.norm() <= tol
    }
}

/// Lifts pixel `(u, v)` with depth `d` to camera coordinates.
pub fn backproject(k: &Intrinsics, u: f64, v: f64, d: f64) -> Result<Vector3<f64>, GeometryError> {
    if d.is_nan() || d <= 0.0 || d.is_infinite() {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    Ok(Vector3::new(
        d * (u - k.cx) / k.fx,
        d * (v - k.cy) / k.fy,
        d,
    ))
}

/// Result of projecting a camera-space point into the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub in_front: bool,
}

/// Projects a camera-space point; behind-camera is signaled, never an error.
pub fn project(k: &Intrinsics, p: &Vector3<f64>) -> Projection {
    let in_front = p.z > MIN_PROJECTION_DEPTH;
    if !in_front {
        return Projection {
            u: 0.0,
            v: 0.0,
            z: p.z,
            in_front,
        };
    }
    Projection {
        u: k.fx * p.x / p.z + k.cx,
        v: k.fy * p.y / p.z + k.cy,
        z: p.z,
        in_front,
    }
}

/// Per-pixel record of a warp, kept so losses can chain gradients through
/// projection and sampling without re-deriving the geometry.
#[derive(Debug, Clone)]
pub struct WarpField {
    pub recon: ImageBuf,
    pub valid: Mask,
    /// Source-image sampling coordinates (u, v) per target pixel.
    pub uv: Vec<(f64, f64)>,
    /// d(u, v)/d(depth) per target pixel.
    pub duv_dd: Vec<(f64, f64)>,
    /// Spatial gradient of the sampled color, per pixel and channel.
    pub dcolor_duv: Vec<[(f64, f64); 3]>,
}

/// Reconstructs the target view by sampling `src` at the coordinates induced
/// by the target's depth and the target-to-source pose.
///
/// A pixel is invalid when its depth is invalid, the transformed point falls
/// behind the source camera, or it projects out of bounds; such pixels carry
/// color 0.
pub fn warp_image(
    src: &ImageBuf,
    depth_tgt: &DepthMap,
    k: &Intrinsics,
    t_tgt_to_src: &PoseSE3,
) -> Result<(ImageBuf, Mask), GeometryError> {
    let field = warp_with_jacobian(src, depth_tgt, k, t_tgt_to_src)?;
    Ok((field.recon, field.valid))
}

/// [`warp_image`] that also records sampling coordinates and derivatives.
pub fn warp_with_jacobian(
    src: &ImageBuf,
    depth_tgt: &DepthMap,
    k: &Intrinsics,
    t_tgt_to_src: &PoseSE3,
) -> Result<WarpField, GeometryError> {
    if src.height() != depth_tgt.height() || src.width() != depth_tgt.width() {
        return Err(GeometryError::DimensionMismatch {
            img_h: src.height(),
            img_w: src.width(),
            depth_h: depth_tgt.height(),
            depth_w: depth_tgt.width(),
        });
    }
    let h = depth_tgt.height();
    let w = depth_tgt.width();
    let channels = src.channels();
    let n = h * w;

    let mut recon = vec![0.0; n * channels];
    let mut valid = vec![false; n];
    let mut uv = vec![(0.0, 0.0); n];
    let mut duv_dd = vec![(0.0, 0.0); n];
    let mut dcolor_duv = vec![[(0.0, 0.0); 3]; n];

    let r = t_tgt_to_src.rotation();
    let t = t_tgt_to_src.translation();

    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            if !depth_tgt.is_valid(row, col) {
                continue;
            }
            let d = depth_tgt.depth_at(row, col);
            // p_src = d * (R * ray) + t, with ray the unit-depth backprojection.
            let ray = Vector3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
            let m = r * ray;
            let p = m * d + t;
            let proj = project(k, &p);
            if !proj.in_front {
                continue;
            }
            let sample = bilinear_sample_with_grad(src, proj.u, proj.v);
            if !sample.in_bounds {
                continue;
            }
            let pz2 = p.z * p.z;
            let du_dd = k.fx * (m.x * t.z - t.x * m.z) / pz2;
            let dv_dd = k.fy * (m.y * t.z - t.y * m.z) / pz2;

            valid[idx] = true;
            uv[idx] = (proj.u, proj.v);
            duv_dd[idx] = (du_dd, dv_dd);
            for ch in 0..channels {
                recon[idx * channels + ch] = sample.color[ch];
                dcolor_duv[idx][ch] = (sample.d_du[ch], sample.d_dv[ch]);
            }
        }
    }

    Ok(WarpField {
        recon: ImageBuf::new(h, w, channels, recon).expect("warp output within [0,1]"),
        valid: Mask::new(h, w, valid).expect("mask length matches"),
        uv,
        duv_dd,
        dcolor_duv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn test_k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 40.0).unwrap()
    }

    #[test]
    fn backproject_principal_ray() {
        let k = test_k();
        let p = backproject(&k, 50.0, 40.0, 1.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_formula() {
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let p = backproject(&k, 100.0, 0.0, 2.0).unwrap();
        assert_eq!(p, Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_rejects_nonpositive_depth() {
        let k = test_k();
        assert!(matches!(
            backproject(&k, 0.0, 0.0, 0.0),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            backproject(&k, 0.0, 0.0, -1.0),
            Err(GeometryError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn project_principal_ray_and_behind() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let p = project(&k, &Vector3::new(0.0, 0.0, 1.0));
        assert!(p.in_front);
        assert_eq!((p.u, p.v, p.z), (50.0, 50.0, 1.0));

        let behind = project(&k, &Vector3::new(0.0, 0.0, -1.0));
        assert!(!behind.in_front);
    }

    #[test]
    fn project_backproject_round_trip() {
        let k = test_k();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u = rng.random::<f64>() * 200.0 - 50.0;
            let v = rng.random::<f64>() * 200.0 - 50.0;
            let d = rng.random::<f64>() * 20.0 + 0.1;
            let p = backproject(&k, u, v, d).unwrap();
            let proj = project(&k, &p);
            assert!(proj.in_front);
            assert!((proj.u - u).abs() < 1e-9);
            assert!((proj.v - v).abs() < 1e-9);
            assert!((proj.z - d).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_validation() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            PoseSE3::new(bad, Vector3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            PoseSE3::new(reflection, Vector3::zeros()),
            Err(GeometryError::Reflection { .. })
        ));
    }

    #[test]
    fn nearest_rotation_projection_cleans_noise() {
        let mut m = nalgebra::Rotation3::from_euler_angles(0.2, -0.1, 0.4).into_inner();
        m[(0, 1)] += 3e-7;
        assert!(PoseSE3::new(m, Vector3::zeros()).is_err());
        let pose = PoseSE3::from_matrix_nearest(m, Vector3::zeros(), 1e-6).unwrap();
        let r = pose.rotation();
        assert!((r.transpose() * r - Matrix3::identity()).norm() <= 1e-9);
    }

    #[test]
    fn pose_inverse_and_compose() {
        let pose = PoseSE3::from_axis_angle(
            Vector3::new(0.1, 1.0, -0.3),
            0.7,
            Vector3::new(0.5, -0.2, 1.0),
        );
        let round = pose.compose(&pose.inverse());
        assert!(round.is_identity(1e-12));

        let p = Vector3::new(1.0, 2.0, 3.0);
        let q = pose.inverse().transform(&pose.transform(&p));
        assert!((q - p).norm() < 1e-12);
    }

    #[test]
    fn identity_warp_reproduces_source() {
        // Lattice-point sampling under an identity pose is exact.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = 12;
        let w = 17;
        let data: Vec<f64> = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
        let src = ImageBuf::new(h, w, 3, data).unwrap();
        let depth = DepthMap::constant(h, w, 4.0).unwrap();
        let k = test_k();
        let (recon, valid) = warp_image(&src, &depth, &k, &PoseSE3::identity()).unwrap();
        // Rounding may push a border pixel's coordinate a few ulps outside the
        // image, so a handful of border pixels can drop out of the mask.
        assert!(valid.count() >= h * w - 2 * (h + w));
        for r in 0..h {
            for c in 0..w {
                if !valid.get(r, c) {
                    continue;
                }
                for ch in 0..3 {
                    assert!((recon.get(r, c, ch) - src.get(r, c, ch)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn all_invalid_depth_gives_vacuous_warp() {
        let src = ImageBuf::constant(4, 4, 1, 0.5).unwrap();
        let depth = DepthMap::new(4, 4, vec![0.0; 16], vec![false; 16]).unwrap();
        let (recon, valid) = warp_image(&src, &depth, &test_k(), &PoseSE3::identity()).unwrap();
        assert_eq!(valid.count(), 0);
        assert!(recon.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_dimension_mismatch_rejected() {
        let src = ImageBuf::constant(4, 4, 1, 0.5).unwrap();
        let depth = DepthMap::constant(4, 5, 1.0).unwrap();
        assert!(matches!(
            warp_image(&src, &depth, &test_k(), &PoseSE3::identity()),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn plane_shift_law_under_x_translation() {
        // Fronto-parallel plane at depth z, pure x-translation tx:
        // recon(u, v) == src(u + fx*tx/z, v). tx gives a subpixel disparity
        // of 4.6 px so the bilinear path is actually exercised.
        let h = 16;
        let w = 32;
        let z = 5.0;
        let tx = 0.23;
        let k = Intrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0).unwrap();
        // Band-limited horizontal sinusoid so bilinear interpolation is tight.
        let f = 1.0 / 24.0;
        let value = |u: f64| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * f * u).sin();
        let data: Vec<f64> = (0..h * w).map(|i| value((i % w) as f64)).collect();
        let src = ImageBuf::new(h, w, 1, data).unwrap();
        let depth = DepthMap::constant(h, w, z).unwrap();
        let pose = PoseSE3::from_translation(tx, 0.0, 0.0);

        let (recon, valid) = warp_image(&src, &depth, &k, &pose).unwrap();
        let disparity = k.fx * tx / z;
        for r in 0..h {
            for c in 0..w {
                if !valid.get(r, c) {
                    continue;
                }
                let expected = crate::grid::bilinear_sample(&src, c as f64 + disparity, r as f64);
                assert!(expected.in_bounds);
                assert!(
                    (recon.get(r, c, 0) - expected.color[0]).abs() < 1e-5,
                    "shift law violated at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn warp_composed_with_inverse_pose_returns_near_start() {
        // Warp frame 1 into frame 0 with T, then warp that reconstruction
        // back into frame 1 with T^-1: the doubly-valid region must match
        // the original to interpolation error.
        let k = Intrinsics::new(100.0, 100.0, 48.0, 32.0).unwrap();
        let pose = PoseSE3::from_axis_angle(
            Vector3::new(0.05, 1.0, 0.0),
            0.015,
            Vector3::new(0.2, 0.05, 0.02),
        );
        let scene = crate::synth::generate_plane_scene(
            &k,
            5.0,
            29,
            &[PoseSE3::identity(), pose.clone()],
            (64, 96),
        )
        .unwrap();
        let frame0 = &scene.frames[0];
        let frame1 = &scene.frames[1];

        let (recon0, valid0) = warp_image(&frame1.image, &frame0.depth, &k, &pose).unwrap();
        let (back1, valid1) = warp_image(&recon0, &frame1.depth, &k, &pose.inverse()).unwrap();

        let mut compared = 0usize;
        for r in 0..64 {
            for c in 0..96 {
                // The round trip also resamples through frame 0, so require
                // the intermediate reconstruction to be valid as well.
                if !(valid0.get(r, c) && valid1.get(r, c)) {
                    continue;
                }
                for ch in 0..3 {
                    let err = (back1.get(r, c, ch) - frame1.image.get(r, c, ch)).abs();
                    assert!(err < 0.02, "round-trip error {err} at ({r},{c},{ch})");
                }
                compared += 1;
            }
        }
        assert!(
            compared > 64 * 96 / 2,
            "only {compared} doubly-valid pixels"
        );
    }

    #[test]
    fn warp_jacobian_matches_finite_difference() {
        let h = 8;
        let w = 8;
        let k = Intrinsics::new(50.0, 55.0, 4.0, 4.0).unwrap();
        let pose = PoseSE3::from_axis_angle(
            Vector3::new(0.0, 1.0, 0.2),
            0.05,
            Vector3::new(0.2, -0.1, 0.05),
        );
        let src = ImageBuf::constant(h, w, 1, 0.5).unwrap();
        let depth = DepthMap::constant(h, w, 3.0).unwrap();
        let field = warp_with_jacobian(&src, &depth, &k, &pose).unwrap();

        let eps = 1e-6;
        let depth_hi = DepthMap::constant(h, w, 3.0 + eps).unwrap();
        let depth_lo = DepthMap::constant(h, w, 3.0 - eps).unwrap();
        let hi = warp_with_jacobian(&src, &depth_hi, &k, &pose).unwrap();
        let lo = warp_with_jacobian(&src, &depth_lo, &k, &pose).unwrap();
        for idx in 0..h * w {
            if !(field.valid.at(idx) && hi.valid.at(idx) && lo.valid.at(idx)) {
                continue;
            }
            let du = (hi.uv[idx].0 - lo.uv[idx].0) / (2.0 * eps);
            let dv = (hi.uv[idx].1 - lo.uv[idx].1) / (2.0 * eps);
            assert!((field.duv_dd[idx].0 - du).abs() < 1e-6);
            assert!((field.duv_dd[idx].1 - dv).abs() < 1e-6);
        }
    }
}
