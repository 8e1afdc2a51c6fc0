//! JSON scene manifests binding images, sparse depths, poses, teachers, and
//! optional ground truth to files on disk.
//!
//! Paths are resolved relative to the manifest's directory. Poses are stored
//! target-relative: each frame's pose file maps target-frame camera
//! coordinates into that frame's camera (`p_frame = R * p_target + t`), so
//! the target frame itself carries the identity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_intrinsics, parse_pose, path_str, read_depth_png16, read_image, read_pfm, IoFormatError,
};
use crate::distill::{TeacherEntry, TeacherKind, TeacherSet};
use crate::geometry::{Intrinsics, PoseSE3};
use crate::grid::{DepthMap, ImageBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSpec {
    pub image: String,
    pub sparse_depth: String,
    pub pose: String,
    #[serde(default)]
    pub target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestTeacherKind {
    Completion,
    Stereo,
}

impl From<ManifestTeacherKind> for TeacherKind {
    fn from(k: ManifestTeacherKind) -> Self {
        match k {
            ManifestTeacherKind::Completion => TeacherKind::Completion,
            ManifestTeacherKind::Stereo => TeacherKind::Stereo,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub name: String,
    pub kind: ManifestTeacherKind,
    pub depth: String,
}

/// The on-disk manifest schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    /// Human-readable statement of the pose convention; informational.
    #[serde(default = "default_convention")]
    pub pose_convention: String,
    pub intrinsics: String,
    pub frames: Vec<FrameSpec>,
    #[serde(default)]
    pub teachers: Vec<TeacherSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

fn default_convention() -> String {
    "p_frame = R * p_target + t".to_string()
}

impl SceneManifest {
    pub fn from_path(path: &Path) -> Result<Self, IoFormatError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoFormatError::Unreadable {
            path: path_str(path),
            source,
        })?;
        let manifest: SceneManifest =
            serde_json::from_str(&text).map_err(|e| IoFormatError::Schema {
                path: path_str(path),
                reason: e.to_string(),
            })?;
        manifest.validate_schema(path)?;
        Ok(manifest)
    }

    fn validate_schema(&self, path: &Path) -> Result<(), IoFormatError> {
        let schema_err = |reason: &str| IoFormatError::Schema {
            path: path_str(path),
            reason: reason.to_string(),
        };
        if self.frames.is_empty() {
            return Err(schema_err("at least one frame is required"));
        }
        let targets = self.frames.iter().filter(|f| f.target).count();
        if targets != 1 {
            return Err(schema_err(&format!(
                "exactly one frame must be marked target, found {targets}"
            )));
        }
        for f in &self.frames {
            if f.image.is_empty() || f.sparse_depth.is_empty() || f.pose.is_empty() {
                return Err(schema_err("frame paths must be nonempty"));
            }
        }
        for t in &self.teachers {
            if t.name.is_empty() || t.depth.is_empty() {
                return Err(schema_err("teacher name and depth path must be nonempty"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IoFormatError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|source| IoFormatError::Unwritable {
            path: path_str(path),
            source,
        })
    }
}

/// A fully loaded frame.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub image: ImageBuf,
    pub sparse_depth: DepthMap,
    /// Maps target-frame camera coordinates into this frame's camera.
    pub pose_from_target: PoseSE3,
    pub is_target: bool,
}

/// A fully loaded, dimension-checked scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub intrinsics: Intrinsics,
    pub frames: Vec<SceneFrame>,
    pub target_index: usize,
    pub teachers: Vec<TeacherEntry>,
    pub ground_truth: Option<DepthMap>,
}

impl Scene {
    pub fn target(&self) -> &SceneFrame {
        &self.frames[self.target_index]
    }

    /// Non-target frames in manifest order.
    pub fn source_frames(&self) -> impl Iterator<Item = &SceneFrame> {
        self.frames.iter().filter(|f| !f.is_target)
    }

    /// The validated teacher ensemble; errors when the manifest listed none.
    pub fn teacher_set(&self) -> Result<TeacherSet, crate::distill::DistillError> {
        TeacherSet::new(self.teachers.clone())
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_exists(path: &Path) -> Result<(), IoFormatError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(IoFormatError::MissingFile {
            path: path_str(path),
        })
    }
}

/// Reads a depth file by extension: 16-bit PNG or PFM.
pub(crate) fn read_depth_auto(path: &Path) -> Result<DepthMap, IoFormatError> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
    {
        Ok(read_pfm(path)?.to_depth_map()?)
    } else {
        read_depth_png16(path)
    }
}

/// Loads and validates a manifest: every referenced file must exist, decode,
/// and agree on dimensions. Nothing is returned on failure.
pub fn load_manifest(path: &Path) -> Result<Scene, IoFormatError> {
    let manifest = SceneManifest::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let k_path = resolve(&base, &manifest.intrinsics);
    check_exists(&k_path)?;
    for f in &manifest.frames {
        for rel in [&f.image, &f.sparse_depth, &f.pose] {
            check_exists(&resolve(&base, rel))?;
        }
    }
    for t in &manifest.teachers {
        check_exists(&resolve(&base, &t.depth))?;
    }
    if let Some(gt) = &manifest.ground_truth {
        check_exists(&resolve(&base, gt))?;
    }

    let intrinsics = parse_intrinsics(&k_path)?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut target_index = 0usize;
    let mut dims: Option<(usize, usize)> = None;
    for (i, spec) in manifest.frames.iter().enumerate() {
        let image_path = resolve(&base, &spec.image);
        let image = read_image(&image_path)?;
        let expected = *dims.get_or_insert((image.height(), image.width()));
        if (image.height(), image.width()) != expected {
            return Err(IoFormatError::DimensionMismatch {
                path: path_str(&image_path),
                context: format!("frame {i} image"),
                expected_h: expected.0,
                expected_w: expected.1,
                got_h: image.height(),
                got_w: image.width(),
            });
        }
        let depth_path = resolve(&base, &spec.sparse_depth);
        let sparse_depth = read_depth_auto(&depth_path)?;
        if (sparse_depth.height(), sparse_depth.width()) != expected {
            return Err(IoFormatError::DimensionMismatch {
                path: path_str(&depth_path),
                context: format!("frame {i} sparse depth"),
                expected_h: expected.0,
                expected_w: expected.1,
                got_h: sparse_depth.height(),
                got_w: sparse_depth.width(),
            });
        }
        let pose = parse_pose(&resolve(&base, &spec.pose))?;
        if spec.target {
            target_index = i;
        }
        frames.push(SceneFrame {
            image,
            sparse_depth,
            pose_from_target: pose,
            is_target: spec.target,
        });
    }
    let expected = dims.expect("at least one frame");

    let mut teacher_entries = Vec::with_capacity(manifest.teachers.len());
    for t in &manifest.teachers {
        let depth_path = resolve(&base, &t.depth);
        let depth = read_depth_auto(&depth_path)?;
        if (depth.height(), depth.width()) != expected {
            return Err(IoFormatError::DimensionMismatch {
                path: path_str(&depth_path),
                context: format!("teacher {:?} depth", t.name),
                expected_h: expected.0,
                expected_w: expected.1,
                got_h: depth.height(),
                got_w: depth.width(),
            });
        }
        teacher_entries.push(TeacherEntry {
            name: t.name.clone(),
            depth,
            kind: t.kind.into(),
        });
    }
    if !teacher_entries.is_empty() {
        // Surface duplicate names and dimension conflicts eagerly.
        TeacherSet::new(teacher_entries.clone())?;
    }

    let ground_truth = match &manifest.ground_truth {
        Some(rel) => {
            let gt_path = resolve(&base, rel);
            let gt = read_depth_auto(&gt_path)?;
            if (gt.height(), gt.width()) != expected {
                return Err(IoFormatError::DimensionMismatch {
                    path: path_str(&gt_path),
                    context: "ground truth".into(),
                    expected_h: expected.0,
                    expected_w: expected.1,
                    got_h: gt.height(),
                    got_w: gt.width(),
                });
            }
            Some(gt)
        }
        None => None,
    };

    Ok(Scene {
        intrinsics,
        frames,
        target_index,
        teachers: teacher_entries,
        ground_truth,
    })
}
