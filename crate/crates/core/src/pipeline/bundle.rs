//! On-disk model bundle: mesh, views with registered textures, metadata.
//!
//! ```text
//! DIR/mesh.ply
//! DIR/views.json             [{camera, refined, texture?, mask?}]
//! DIR/textures/view_000.png  RGB
//! DIR/masks/view_000.png     gray, 255 where the texture applies
//! DIR/meta.json
//! ```
//!
//! Saving writes a sibling temporary directory and renames it into place, so
//! an interrupted save leaves either the previous bundle or the new one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::io::{read_mask_png, read_png, write_png};
use crate::field::Field2D;
use crate::mesh::io::{load_mesh, save_mesh};
use crate::mesh::TriMesh;
use crate::raster::OrthoCamera;
use crate::texture::{to_rgba, ProjectorSet};

#[derive(Debug, Clone, PartialEq)]
pub struct BundleView {
    pub camera: OrthoCamera,
    pub refined: bool,
    /// RGB texture seen from `camera`.
    pub texture: Option<Field2D>,
    /// Where `texture` applies; defaults to everywhere.
    pub mask: Option<Field2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub mesh: TriMesh,
    pub views: Vec<BundleView>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    camera: OrthoCamera,
    refined: bool,
    texture: Option<String>,
    mask: Option<String>,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl ModelBundle {
    pub fn new(mesh: TriMesh) -> Self {
        Self {
            mesh,
            views: Vec::new(),
            meta: serde_json::json!({}),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if let Some(t) = &v.texture {
                if t.channels() != 3 {
                    return Err(Error::invalid(format!("view {i}: texture must be RGB")));
                }
                if let Some(m) = &v.mask {
                    t.ensure_same_size(m)?;
                }
            } else if v.refined {
                return Err(Error::invalid(format!("view {i} is refined but has no texture")));
            }
        }
        Ok(())
    }

    pub fn refined_cameras(&self) -> Vec<OrthoCamera> {
        self.views.iter().filter(|v| v.refined).map(|v| v.camera.clone()).collect()
    }

    /// Projectors for every view that carries a texture.
    pub fn projectors(&self) -> Result<ProjectorSet> {
        let entries = self
            .views
            .iter()
            .filter_map(|v| {
                v.texture
                    .as_ref()
                    .map(|t| to_rgba(t, v.mask.as_ref()).map(|rgba| (v.camera.clone(), rgba, v.refined)))
            })
            .collect::<Result<Vec<_>>>()?;
        ProjectorSet::build(&self.mesh, entries)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let dir = if dir.exists() {
            dir.to_path_buf()
        } else {
            // a save interrupted between its two renames leaves the old copy
            let old = sibling(dir, "old");
            if old.exists() {
                old
            } else {
                return Err(format_err(dir, "bundle directory not found"));
            }
        };
        let mesh = load_mesh(dir.join("mesh.ply"))?;
        let views_path = dir.join("views.json");
        let entries: Vec<ViewEntry> = serde_json::from_slice(&fs::read(&views_path)?)
            .map_err(|e| format_err(&views_path, e.to_string()))?;
        let mut views = Vec::with_capacity(entries.len());
        for e in entries {
            let texture = e.texture.as_ref().map(|p| read_png(dir.join(p)).map(|f| rgb_only(&f))).transpose()?;
            let mask = e.mask.as_ref().map(|p| read_mask_png(dir.join(p))).transpose()?;
            views.push(BundleView {
                camera: e.camera,
                refined: e.refined,
                texture,
                mask,
            });
        }
        let meta_path = dir.join("meta.json");
        let meta = if meta_path.exists() {
            serde_json::from_slice(&fs::read(&meta_path)?).map_err(|e| format_err(&meta_path, e.to_string()))?
        } else {
            serde_json::json!({})
        };
        let b = ModelBundle { mesh, views, meta };
        b.validate()?;
        Ok(b)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = sibling(dir, "tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(tmp.join("textures"))?;
        fs::create_dir_all(tmp.join("masks"))?;
        save_mesh(&self.mesh, tmp.join("mesh.ply"))?;
        let mut entries = Vec::with_capacity(self.views.len());
        for (i, v) in self.views.iter().enumerate() {
            let texture = match &v.texture {
                Some(t) => {
                    let rel = format!("textures/view_{i:03}.png");
                    write_png(tmp.join(&rel), t)?;
                    Some(rel)
                }
                None => None,
            };
            let mask = match &v.mask {
                Some(m) => {
                    let rel = format!("masks/view_{i:03}.png");
                    write_png(tmp.join(&rel), m)?;
                    Some(rel)
                }
                None => None,
            };
            entries.push(ViewEntry {
                camera: v.camera.clone(),
                refined: v.refined,
                texture,
                mask,
            });
        }
        fs::write(tmp.join("views.json"), serde_json::to_vec_pretty(&entries)?)?;
        fs::write(tmp.join("meta.json"), serde_json::to_vec_pretty(&self.meta)?)?;

        let old = sibling(dir, "old");
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        if dir.exists() {
            fs::rename(dir, &old)?;
        }
        fs::rename(&tmp, dir)?;
        if old.exists() {
            fs::remove_dir_all(&old)?;
        }
        Ok(())
    }
}

fn rgb_only(f: &Field2D) -> Field2D {
    match f.channels() {
        3 => f.clone(),
        1 | 2 => Field2D::from_channels(&[f.channel(0), f.channel(0), f.channel(0)]).expect("same size"),
        _ => Field2D::from_channels(&[f.channel(0), f.channel(1), f.channel(2)]).expect("same size"),
    }
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
    dir.with_file_name(format!(".{name}.{tag}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, with_procedural_colors};
    use crate::Vec3;

    fn sample() -> ModelBundle {
        let mesh = with_procedural_colors(icosphere(2), 0.5);
        let cam = OrthoCamera::framing(&mesh.bounding_sphere().unwrap(), Vec3::new(1.0, 0.2, 0.1)).unwrap();
        let tex = Field2D::from_fn(16, 16, 3, |x, y, c| ((x + y + c) % 4) as f64 / 3.0);
        let mask = Field2D::from_fn(16, 16, 1, |x, _, _| if x < 8 { 1.0 } else { 0.0 });
        let mut b = ModelBundle::new(mesh);
        b.views.push(BundleView {
            camera: cam.clone(),
            refined: true,
            texture: Some(tex),
            mask: Some(mask),
        });
        b.views.push(BundleView {
            camera: cam,
            refined: false,
            texture: None,
            mask: None,
        });
        b.meta = serde_json::json!({"seed": 3});
        b
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        let b = sample();
        b.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        assert_eq!(back.mesh.vertices, b.mesh.vertices);
        assert_eq!(back.views.len(), 2);
        assert_eq!(back.views[0].camera, b.views[0].camera);
        assert_eq!(back.views[0].texture, b.views[0].texture);
        assert_eq!(back.views[0].mask, b.views[0].mask);
        assert_eq!(back.meta, b.meta);
        // overwrite in place, no leftovers
        back.save(&path).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        sample().save(&a).unwrap();
        sample().save(&b).unwrap();
        for f in ["mesh.ply", "views.json", "meta.json", "textures/view_000.png", "masks/view_000.png"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn interrupted_save_recovers_old_copy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        sample().save(&path).unwrap();
        fs::rename(&path, sibling(&path, "old")).unwrap();
        assert!(ModelBundle::load(&path).is_ok());
    }

    #[test]
    fn malformed_views_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        sample().save(&path).unwrap();
        fs::write(path.join("views.json"), b"[{").unwrap();
        let err = ModelBundle::load(&path).unwrap_err().to_string();
        assert!(err.contains("views.json"), "{err}");
    }
}
