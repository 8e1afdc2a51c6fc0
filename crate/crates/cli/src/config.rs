//! Run configuration: the constants the pipeline needs that are not part of
//! any input file. Every run serializes its configuration verbatim into the
//! run manifest so outputs are reproducible from the manifest alone.

use depthdistill::as2d::As2dConfig;
use depthdistill::losses::{LossWeights, MinMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Tunable constants with their defaults. None of the defaults below are
/// mandated by the depth-completion literature this tool follows; they are
/// this repository's declared choices and can be overridden via --config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Pyramid levels used by multi-scale losses (1..=6).
    pub scales: usize,
    /// One weight per pyramid level, finite and nonnegative.
    pub scale_weights: Vec<f64>,
    /// Weight of the photometric term in the combined loss.
    pub w_photometric: f64,
    /// Weight of the structure (SSIM) term in the combined loss.
    pub w_structure: f64,
    /// Per-pixel minimum over sources: minimize terms separately or jointly.
    pub min_mode: MinMode,
    /// Scale of the error-to-confidence mapping exp(-error/sigma).
    pub confidence_sigma: f64,
    /// Sparse-to-dense min-pooling kernel sizes (odd).
    pub min_kernels: Vec<usize>,
    /// Sparse-to-dense max-pooling kernel sizes (odd).
    pub max_kernels: Vec<usize>,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    /// Base RNG seed; commands may override via --seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            scale_weights: vec![0.25; 4],
            w_photometric: 0.15,
            w_structure: 0.85,
            min_mode: MinMode::Separate,
            confidence_sigma: 0.1,
            min_kernels: vec![3, 5, 7, 9, 11],
            max_kernels: vec![13, 15],
            reduction: 4,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(1..=6).contains(&self.scales) {
            return Err(CliError::input(format!(
                "scales must be in 1..=6, got {}",
                self.scales
            )));
        }
        if self.scale_weights.len() != self.scales {
            return Err(CliError::input(format!(
                "{} scale_weights for {} scales",
                self.scale_weights.len(),
                self.scales
            )));
        }
        for &w in &self.scale_weights {
            if !w.is_finite() || w < 0.0 {
                return Err(CliError::input(format!("bad scale weight {w}")));
            }
        }
        for &w in &[self.w_photometric, self.w_structure] {
            if !w.is_finite() || w < 0.0 {
                return Err(CliError::input(format!(
                    "loss weights must be >= 0, got {w}"
                )));
            }
        }
        if self.confidence_sigma.is_nan()
            || self.confidence_sigma <= 0.0
            || self.confidence_sigma.is_infinite()
        {
            return Err(CliError::input(format!(
                "confidence_sigma must be positive, got {}",
                self.confidence_sigma
            )));
        }
        for &k in self.min_kernels.iter().chain(self.max_kernels.iter()) {
            if k == 0 || k % 2 == 0 {
                return Err(CliError::input(format!(
                    "pooling kernels must be odd, got {k}"
                )));
            }
        }
        if self.min_kernels.is_empty() && self.max_kernels.is_empty() {
            return Err(CliError::input(
                "at least one pooling kernel is required".into(),
            ));
        }
        if self.reduction == 0 {
            return Err(CliError::input("reduction must be >= 1".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            photometric: self.w_photometric,
            structure: self.w_structure,
            min_mode: self.min_mode,
        }
    }

    pub fn as2d_config(&self) -> As2dConfig {
        As2dConfig {
            min_kernels: self.min_kernels.clone(),
            max_kernels: self.max_kernels.clone(),
            reduction: self.reduction,
        }
    }
}
