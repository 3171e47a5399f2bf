//! Dataset manifest: a JSON document listing samples and their inputs.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "samples": [
//!     {
//!       "id": "room-0",
//!       "gt": "room-0/gt.pfm",
//!       "pred": "room-0/pred.png",
//!       "intrinsics": { "fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480 }
//!     }
//!   ]
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. A sample
//! may instead describe a synthetic scene, in which case ground truth,
//! intrinsics, cloud and pose come from the scene generator.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use metricforge::geometry::{CameraIntrinsics, RigidTransform, SceneSpec};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub samples: Vec<Sample>,
}

/// Where a sample's data comes from; selects the teacher objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    /// RGB image; carried through but never decoded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PathBuf>,
    /// Sensor-frame point cloud for `project`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<PathBuf>,
    /// Camera-frame point map for `calib`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointmap: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Sensor-to-camera transform for `project`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    /// Focal length of the predicted camera, for the FOV error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_focal: Option<f64>,
    /// Overrides the seed derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn to_transform(&self) -> metricforge::Result<RigidTransform> {
        let r = self.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(self.translation),
        )
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        let r = t.rotation();
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation().x, t.translation().y, t.translation().z],
        }
    }
}

/// A generated scene standing in for captured data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub scene: SceneSpec,
    /// Scene seed; the sample seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Sample {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: None,
            gt: None,
            pred: None,
            prior: None,
            prompt: None,
            cloud: None,
            pointmap: None,
            intrinsics: None,
            pose: None,
            synthetic: None,
            domain: None,
            pred_focal: None,
            seed: None,
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain.unwrap_or(if self.synthetic.is_some() {
            Domain::Synthetic
        } else {
            Domain::Real
        })
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut PathBuf)> {
        [
            ("image", self.image.as_mut()),
            ("gt", self.gt.as_mut()),
            ("pred", self.pred.as_mut()),
            ("prior", self.prior.as_mut()),
            ("prompt", self.prompt.as_mut()),
            ("cloud", self.cloud.as_mut()),
            ("pointmap", self.pointmap.as_mut()),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.map(|p| (k, p)))
    }
}

impl Manifest {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            samples,
        }
    }

    /// Parses, validates and resolves every path against the manifest's
    /// directory. Missing files are reported here rather than mid-run.
    pub fn load(path: &Path) -> Result<Self> {
        let parse_err = |reason: String| CliError::ManifestParse {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(parse_err(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        manifest.resolve(&base).map_err(parse_err)?;
        Ok(manifest)
    }

    fn resolve(&mut self, base: &Path) -> std::result::Result<(), String> {
        let mut ids = HashSet::new();
        for s in &mut self.samples {
            if s.id.is_empty() || s.id.contains(['/', '\\']) || s.id == "." || s.id == ".." {
                return Err(format!("sample id {:?} is not a plain name", s.id));
            }
            if !ids.insert(s.id.clone()) {
                return Err(format!("duplicate sample id {:?}", s.id));
            }
            if let Some(k) = &s.intrinsics {
                k.validate().map_err(|e| format!("sample {}: {e}", s.id))?;
            }
            if let Some(p) = &s.pose {
                p.to_transform().map_err(|e| format!("sample {}: {e}", s.id))?;
            }
            let id = s.id.clone();
            for (key, p) in s.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(format!("sample {id}: {key} file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        crate::formats::write_bytes(path, json.as_bytes())
    }
}
