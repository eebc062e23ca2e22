//! Dataset manifest (JSON) and the in-memory dataset it describes.
//!
//! ```json
//! {
//!   "schema": "hdrfield.manifest/1",
//!   "bounds": { "min": [-1, -1, -1], "max": [1, 1, 1] },
//!   "reference_view": null,
//!   "views": [{
//!     "id": "view_00",
//!     "image": "view_00.png",
//!     "hdr": "view_00.pfm",
//!     "mask": "view_00_mask.png",
//!     "intrinsics": { "fx": 70, "fy": 70, "cx": 32, "cy": 32, "width": 64, "height": 64 },
//!     "camera_to_world": [[1,0,0,0],[0,1,0,0],[0,0,1,-2.5],[0,0,0,1]],
//!     "role": "train"
//!   }],
//!   "ground_truth": { "profile": "profile.json", "grid": "gt_grid.hvxf" }
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `hdr`, `mask`,
//! `reference_view` and `ground_truth` are optional. A missing mask means
//! the full frame for train views and the left half for test views.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::image::{read_pfm, read_png, ImageBuffer};
use crate::io::metrics::left_half_mask;
use crate::math::Aabb;
use crate::render::Camera;
use crate::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "hdrfield.manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hdr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub intrinsics: Intrinsics,
    pub camera_to_world: [[f64; 4]; 4],
    pub role: Role,
}

impl ViewEntry {
    pub fn camera(&self) -> Result<Camera> {
        let k = &self.intrinsics;
        Camera::from_c2w(k.fx, k.fy, k.cx, k.cy, k.width, k.height, &self.camera_to_world)
    }
}

/// A free camera for novel-view rendering, in the manifest's view
/// convention (intrinsics plus a camera-to-world matrix).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub intrinsics: Intrinsics,
    pub camera_to_world: [[f64; 4]; 4],
}

impl Pose {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("pose", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn camera(&self) -> Result<Camera> {
        let k = &self.intrinsics;
        Camera::from_c2w(k.fx, k.fy, k.cx, k.cy, k.width, k.height, &self.camera_to_world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub profile: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub bounds: Aabb,
    #[serde(default)]
    pub reference_view: Option<String>,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthEntry>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::format("manifest", e.to_string()))?;
        m.validate_structure()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for v in &m.views {
            for f in std::iter::once(&v.image).chain(&v.hdr).chain(&v.mask) {
                let p = dir.join(f);
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
                    ));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    fn validate_structure(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::format(
                "manifest",
                format!("unsupported schema {:?}, expected {MANIFEST_SCHEMA:?}", self.schema),
            ));
        }
        Aabb::new(self.bounds.min, self.bounds.max)?;
        if self.views.is_empty() {
            return Err(Error::format("manifest", "no views"));
        }
        let mut seen = HashSet::new();
        for v in &self.views {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::format("manifest", format!("duplicate view id {:?}", v.id)));
            }
            v.camera()
                .map_err(|e| Error::format("manifest", format!("view {:?}: {e}", v.id)))?;
        }
        if let Some(r) = &self.reference_view {
            if !seen.contains(r.as_str()) {
                return Err(Error::format("manifest", format!("unknown reference view {r:?}")));
            }
        }
        Ok(())
    }
}

/// One loaded view.
#[derive(Debug, Clone)]
pub struct View {
    pub id: String,
    pub camera: Camera,
    pub ldr: ImageBuffer,
    pub hdr: Option<ImageBuffer>,
    /// Pixels whose rays may be used for training.
    pub train_mask: Vec<bool>,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub bounds: Aabb,
    pub views: Vec<View>,
    pub reference_view: Option<usize>,
    pub dir: PathBuf,
    pub ground_truth: Option<GroundTruthEntry>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut views = Vec::with_capacity(m.views.len());
        for v in &m.views {
            let camera = v.camera()?;
            let ldr = read_png(&dir.join(&v.image))?;
            if ldr.width != camera.width || ldr.height != camera.height {
                return Err(Error::format(
                    "manifest",
                    format!("view {:?}: image size does not match intrinsics", v.id),
                ));
            }
            let hdr = match &v.hdr {
                Some(p) => Some(read_pfm(&dir.join(p))?),
                None => None,
            };
            let train_mask = match &v.mask {
                Some(p) => {
                    let img = read_png(&dir.join(p))?;
                    if !img.same_shape(&ldr) {
                        return Err(Error::format("manifest", format!("view {:?}: mask size mismatch", v.id)));
                    }
                    img.pixels().map(|px| px[0] > 0.5).collect()
                }
                None => match v.role {
                    Role::Train => vec![true; ldr.pixel_count()],
                    Role::Test => left_half_mask(ldr.width, ldr.height),
                },
            };
            views.push(View {
                id: v.id.clone(),
                camera,
                ldr,
                hdr,
                train_mask,
                role: v.role,
            });
        }
        let reference_view = m
            .reference_view
            .as_ref()
            .map(|r| views.iter().position(|v| &v.id == r).expect("validated"));
        Ok(Dataset {
            bounds: m.bounds,
            views,
            reference_view,
            dir,
            ground_truth: m.ground_truth,
        })
    }

    pub fn view_index(&self, id: &str) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }

    pub fn test_views(&self) -> impl Iterator<Item = (usize, &View)> {
        self.views.iter().enumerate().filter(|(_, v)| v.role == Role::Test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> ViewEntry {
        ViewEntry {
            id: id.into(),
            image: format!("{id}.png"),
            hdr: None,
            mask: None,
            intrinsics: Intrinsics {
                fx: 10.0,
                fy: 10.0,
                cx: 2.0,
                cy: 2.0,
                width: 4,
                height: 4,
            },
            camera_to_world: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, -3.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            role: Role::Train,
        }
    }

    fn manifest(views: Vec<ViewEntry>) -> DatasetManifest {
        DatasetManifest {
            schema: MANIFEST_SCHEMA.into(),
            bounds: Aabb::cube(1.0),
            reference_view: None,
            views,
            ground_truth: None,
        }
    }

    #[test]
    fn json_round_trip() {
        let m = manifest(vec![entry("a"), entry("b")]);
        assert_eq!(DatasetManifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn rejects_duplicates_bad_schema_and_bad_pose() {
        let m = manifest(vec![entry("a"), entry("a")]);
        assert!(DatasetManifest::from_json(&m.to_json()).is_err());
        let mut m = manifest(vec![entry("a")]);
        m.schema = "other/1".into();
        assert!(DatasetManifest::from_json(&m.to_json()).is_err());
        let mut e = entry("a");
        e.camera_to_world[0][0] = 2.0;
        assert!(DatasetManifest::from_json(&manifest(vec![e]).to_json()).is_err());
        let mut m = manifest(vec![entry("a")]);
        m.reference_view = Some("zzz".into());
        assert!(DatasetManifest::from_json(&m.to_json()).is_err());
    }

    #[test]
    fn load_requires_referenced_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest(vec![entry("a")]).save(&path).unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Io { .. })));
    }
}
