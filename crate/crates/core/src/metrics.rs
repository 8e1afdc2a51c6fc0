//! Depth evaluation metrics over the pixels where both prediction and ground
//! truth are valid: MAE and RMSE in millimeters, iMAE and iRMSE on inverse
//! depth in 1/km.

use thiserror::Error;

use crate::grid::DepthMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction {pred_h}x{pred_w} does not match ground truth {gt_h}x{gt_w}")]
    DimensionMismatch {
        pred_h: usize,
        pred_w: usize,
        gt_h: usize,
        gt_w: usize,
    },
    #[error("no pixel is valid in both prediction and ground truth")]
    EmptyEvaluation,
}

/// The four standard depth-completion metrics plus coverage diagnostics.
///
/// Pixels where the ground truth is valid but the prediction is not are
/// excluded from the metrics and reported via `gt_valid_pixels`, so missing
/// coverage is visible instead of silently penalized.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricReport {
    pub mae_mm: f64,
    pub rmse_mm: f64,
    pub imae_per_km: f64,
    pub irmse_per_km: f64,
    /// Pixels evaluated: valid in both maps.
    pub valid_pixels: usize,
    /// Pixels valid in the ground truth, whether or not predicted.
    pub gt_valid_pixels: usize,
}

impl MetricReport {
    /// Fraction of ground-truth pixels the prediction covered.
    pub fn coverage(&self) -> f64 {
        if self.gt_valid_pixels == 0 {
            0.0
        } else {
            self.valid_pixels as f64 / self.gt_valid_pixels as f64
        }
    }

    /// Single-line CSV: header plus one row.
    pub fn to_csv(&self) -> String {
        format!(
            "mae_mm,rmse_mm,imae_per_km,irmse_per_km,valid_pixels,gt_valid_pixels,coverage\n\
             {},{},{},{},{},{},{}\n",
            self.mae_mm,
            self.rmse_mm,
            self.imae_per_km,
            self.irmse_per_km,
            self.valid_pixels,
            self.gt_valid_pixels,
            self.coverage()
        )
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "MAE    {:>12.3} mm", self.mae_mm)?;
        writeln!(f, "RMSE   {:>12.3} mm", self.rmse_mm)?;
        writeln!(f, "iMAE   {:>12.3} 1/km", self.imae_per_km)?;
        writeln!(f, "iRMSE  {:>12.3} 1/km", self.irmse_per_km)?;
        write!(
            f,
            "pixels {:>12} evaluated ({:.1}% of {} ground-truth pixels)",
            self.valid_pixels,
            100.0 * self.coverage(),
            self.gt_valid_pixels
        )
    }
}

/// Evaluates a predicted depth map against ground truth.
///
/// MAE = sum(|d_e - d_gr|)/P, RMSE = sqrt(sum(|d_e - d_gr|^2)/P), and the
/// same on inverse depth for iMAE/iRMSE, with P the count of pixels valid in
/// both maps. Depth differences are taken in meters and reported in mm; the
/// inverse-depth metrics are reported per kilometer.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap) -> Result<MetricReport, MetricsError> {
    if !pred.same_dims(gt) {
        return Err(MetricsError::DimensionMismatch {
            pred_h: pred.height(),
            pred_w: pred.width(),
            gt_h: gt.height(),
            gt_w: gt.width(),
        });
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut iabs_sum = 0.0;
    let mut isq_sum = 0.0;
    let mut n = 0usize;
    let mut gt_valid = 0usize;
    for idx in 0..pred.depths().len() {
        if !gt.valid()[idx] {
            continue;
        }
        gt_valid += 1;
        if !pred.valid()[idx] {
            continue;
        }
        let de = pred.depths()[idx];
        let dg = gt.depths()[idx];
        let diff = (de - dg).abs();
        let idiff = (1.0 / de - 1.0 / dg).abs();
        abs_sum += diff;
        sq_sum += diff * diff;
        iabs_sum += idiff;
        isq_sum += idiff * idiff;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let p = n as f64;
    Ok(MetricReport {
        mae_mm: abs_sum / p * 1000.0,
        rmse_mm: (sq_sum / p).sqrt() * 1000.0,
        imae_per_km: iabs_sum / p * 1000.0,
        irmse_per_km: (isq_sum / p).sqrt() * 1000.0,
        valid_pixels: n,
        gt_valid_pixels: gt_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_prediction_is_zero() {
        let d = DepthMap::constant(4, 4, 2.5).unwrap();
        let r = evaluate(&d, &d).unwrap();
        assert_eq!(r.mae_mm, 0.0);
        assert_eq!(r.rmse_mm, 0.0);
        assert_eq!(r.imae_per_km, 0.0);
        assert_eq!(r.irmse_per_km, 0.0);
        assert_eq!(r.valid_pixels, 16);
    }

    #[test]
    fn two_pixel_hand_computation() {
        // gt = {1 m, 2 m}, pred = {2 m, 4 m}:
        //   MAE  = (1 + 2)/2 * 1000                    = 1500 mm
        //   RMSE = sqrt((1 + 4)/2) * 1000              = sqrt(2.5) km/m
        //   iMAE = (|1-0.5| + |0.5-0.25|)/2 * 1000     = 375 /km
        //   iRMSE= sqrt((0.25 + 0.0625)/2) * 1000      = sqrt(0.15625)*1000
        let gt = DepthMap::new(1, 2, vec![1.0, 2.0], vec![true, true]).unwrap();
        let pred = DepthMap::new(1, 2, vec![2.0, 4.0], vec![true, true]).unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(r.mae_mm, 1500.0) < 1e-12);
        assert!(rel(r.rmse_mm, 2.5f64.sqrt() * 1000.0) < 1e-12);
        assert!(rel(r.imae_per_km, 375.0) < 1e-12);
        assert!(rel(r.irmse_per_km, 0.15625f64.sqrt() * 1000.0) < 1e-12);
        assert!((r.rmse_mm - 1581.14).abs() < 0.01);
        assert!((r.irmse_per_km - 395.28).abs() < 0.01);
    }

    #[test]
    fn uniform_offset_has_equal_mae_rmse() {
        let gt = DepthMap::constant(8, 8, 3.0).unwrap();
        let pred = DepthMap::constant(8, 8, 3.001).unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        assert!((r.mae_mm - 1.0).abs() < 1e-9);
        assert!((r.rmse_mm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn partial_coverage_is_reported_not_penalized() {
        let gt = DepthMap::constant(2, 2, 2.0).unwrap();
        let pred = DepthMap::new(
            2,
            2,
            vec![2.0, 2.0, 0.0, 0.0],
            vec![true, true, false, false],
        )
        .unwrap();
        let r = evaluate(&pred, &gt).unwrap();
        assert_eq!(r.valid_pixels, 2);
        assert_eq!(r.gt_valid_pixels, 4);
        assert_eq!(r.coverage(), 0.5);
        assert_eq!(r.mae_mm, 0.0);
    }

    #[test]
    fn errors_are_distinct() {
        let a = DepthMap::constant(2, 2, 1.0).unwrap();
        let b = DepthMap::constant(2, 3, 1.0).unwrap();
        assert!(matches!(
            evaluate(&a, &b),
            Err(MetricsError::DimensionMismatch { .. })
        ));
        let empty = DepthMap::new(2, 2, vec![0.0; 4], vec![false; 4]).unwrap();
        assert!(matches!(
            evaluate(&a, &empty),
            Err(MetricsError::EmptyEvaluation)
        ));
        assert!(matches!(
            evaluate(&empty, &a),
            Err(MetricsError::EmptyEvaluation)
        ));
    }

    #[test]
    fn permutation_invariant() {
        let gt_v = vec![1.0, 2.0, 3.0, 4.0];
        let pr_v = vec![1.5, 2.5, 2.0, 4.4];
        let gt = DepthMap::new(2, 2, gt_v.clone(), vec![true; 4]).unwrap();
        let pr = DepthMap::new(2, 2, pr_v.clone(), vec![true; 4]).unwrap();
        let r1 = evaluate(&pr, &gt).unwrap();

        let perm = [2usize, 0, 3, 1];
        let gt2 =
            DepthMap::new(2, 2, perm.iter().map(|&i| gt_v[i]).collect(), vec![true; 4]).unwrap();
        let pr2 =
            DepthMap::new(2, 2, perm.iter().map(|&i| pr_v[i]).collect(), vec![true; 4]).unwrap();
        let r2 = evaluate(&pr2, &gt2).unwrap();
        assert!((r1.mae_mm - r2.mae_mm).abs() < 1e-12);
        assert!((r1.rmse_mm - r2.rmse_mm).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 24usize;
            let gt: Vec<f64> = (0..n).map(|_| 0.5 + 10.0 * rng.random::<f64>()).collect();
            let pred: Vec<f64> = gt
                .iter()
                .map(|&d| (d + rng.random::<f64>() * 2.0 - 1.0).max(0.05))
                .collect();
            let valid: Vec<bool> = (0..n).map(|_| rng.random::<f64>() > 0.1).collect();
            let mut gt_m = gt;
            for (d, &v) in gt_m.iter_mut().zip(&valid) {
                if !v { *d = 0.0; }
            }
            let gt = DepthMap::new(4, 6, gt_m, valid).unwrap();
            let pred = DepthMap::new(4, 6, pred, vec![true; n]).unwrap();
            match evaluate(&pred, &gt) {
                Ok(r) => {
                    // Power-mean inequality, allowing 1 ulp of rounding slack.
                    prop_assert!(r.rmse_mm >= r.mae_mm * (1.0 - 1e-12));
                    prop_assert!(r.irmse_per_km >= r.imae_per_km * (1.0 - 1e-12));
                }
                Err(MetricsError::EmptyEvaluation) => {}
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }
    }
}
