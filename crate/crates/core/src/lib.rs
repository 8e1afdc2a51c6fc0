//! Monitored ensemble distillation for depth completion.
//!
//! The crate validates candidate dense depth maps ("teachers") by multi-view
//! photometric reprojection, fuses the best per-pixel values into a distilled
//! depth map with confidence, and provides the supporting machinery: raster
//! containers and pyramids, pinhole warping, photometric/SSIM losses with
//! analytic depth gradients, an attention-based sparse-to-dense forward pass,
//! evaluation metrics, file formats, and a synthetic-scene oracle for testing
//! the whole pipeline without real datasets.

pub use nalgebra;

pub mod as2d;
pub mod distill;
pub mod geometry;
pub mod grid;
pub mod io_formats;
pub mod losses;
pub mod metrics;
pub mod synth;

pub use geometry::{Intrinsics, PoseSE3};
pub use grid::{DepthMap, ImageBuf, Mask, Pyramid};
