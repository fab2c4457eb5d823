//! Scene datasets on disk, image and point-cloud formats, checkpoints,
//! synthetic scenes and model initialization.
//!
//! A scene directory holds `scene.json` plus the files it references:
//!
//! ```json
//! {
//!   "version": 1,
//!   "background": [0.0, 0.0, 0.0],
//!   "test_every": 8,
//!   "point_cloud": "points.ply",
//!   "reference_model": "reference.bin",
//!   "frames": [
//!     { "name": "000", "fx": 80.0, "fy": 80.0, "cx": 32.0, "cy": 32.0,
//!       "width": 64, "height": 64,
//!       "world_to_camera": [[1,0,0,0],[0,1,0,0],[0,0,1,4]],
//!       "image": "images/000.pfm", "depth": "depths/000.pfm" }
//!   ]
//! }
//! ```
//!
//! Images are 8-bit PNG or PFM; depths are single-channel PFM. Frames whose
//! manifest index is a multiple of `test_every` form the test split.

pub mod checkpoint;
pub mod init;
pub mod pfm;
pub mod ply;
pub mod synth;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud, DEFAULT_NEAR};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use init::{init_cloud, knn_mean_distance};
pub use ply::PointCloud;
pub use synth::{synth_scene, SynthPreset, SynthScene};

pub const MANIFEST_NAME: &str = "scene.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    /// Reference depth of the visible surface (camera-space z, alpha-normalized).
    pub depth: Option<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    /// All frames in manifest order.
    pub frames: Vec<Frame>,
    pub test_every: usize,
    pub point_cloud: Option<PointCloud>,
    /// Ground-truth model, present for synthetic scenes.
    pub reference_model: Option<GaussianCloud>,
    pub background: Vector3<f64>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if self.test_every == 0 {
            return Err(Error::InvalidParameter("test_every must be at least 1".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.camera.validate()?;
            let c = &f.camera;
            if f.image.width() != c.width || f.image.height() != c.height || f.image.channels() != 3 {
                return Err(Error::Shape(format!(
                    "frame {i}: image is {}x{}x{}, camera is {}x{}x3",
                    f.image.width(),
                    f.image.height(),
                    f.image.channels(),
                    c.width,
                    c.height
                )));
            }
            if let Some(d) = &f.depth {
                if d.width() != c.width || d.height() != c.height || d.channels() != 1 {
                    return Err(Error::Shape(format!("frame {i}: depth map does not match the camera")));
                }
            }
        }
        Ok(())
    }

    pub fn is_test_index(&self, i: usize) -> bool {
        i % self.test_every == 0
    }

    pub fn train_frames(&self) -> Vec<&Frame> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_test_index(*i))
            .map(|(_, f)| f)
            .collect()
    }

    pub fn test_frames(&self) -> Vec<&Frame> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_test_index(*i))
            .map(|(_, f)| f)
            .collect()
    }

    /// `k` evenly spaced training frames (all of them when `k` is `None` or too large).
    pub fn sampled_train_frames(&self, k: Option<usize>) -> Vec<&Frame> {
        let all = self.train_frames();
        match k {
            Some(k) if k < all.len() => (0..k).map(|i| all[i * all.len() / k]).collect(),
            _ => all,
        }
    }

    /// Radius of the sphere around the training camera centroid that holds
    /// every training camera center, enlarged by 10%; 1 when degenerate.
    pub fn scene_extent(&self) -> f64 {
        let cams: Vec<&Camera> = self.train_frames().iter().map(|f| &f.camera).collect();
        camera_extent(&cams)
    }
}

pub fn camera_extent(cams: &[&Camera]) -> f64 {
    if cams.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cams.iter().map(|c| c.center()).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if r > 1e-9 {
        r
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    #[serde(default)]
    background: [f64; 3],
    #[serde(default = "default_test_every")]
    test_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point_cloud: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_model: Option<String>,
    frames: Vec<FrameEntry>,
}

fn default_test_every() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    name: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    world_to_camera: [[f64; 4]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    near: Option<f64>,
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
}

/// Reads an RGB image: `.pfm` as stored, anything else through the PNG decoder (8-bit, scaled to [0, 1]).
pub fn read_image(path: &Path) -> Result<Image> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        return pfm::read_pfm(path);
    }
    let img = image::open(path)
        .map_err(|e| Error::load(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, 3, data)
}

/// Writes an RGB image as 8-bit PNG, clamping to [0, 1] and rounding.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "PNG export expects 3 channels, got {}",
            img.channels()
        )));
    }
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::Internal("PNG buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn camera_from_entry(e: &FrameEntry, i: usize, manifest: &Path) -> Result<Camera> {
    let m = &e.world_to_camera;
    let r = Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    );
    let t = Vector3::new(m[0][3], m[1][3], m[2][3]);
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= 1e-6) || !(r.determinant() > 0.0) {
        return Err(Error::load(
            manifest,
            format!(
                "frame {i} ({}): world_to_camera rotation is not orthonormal (error {err:.3e})",
                e.name
            ),
        ));
    }
    // Slightly noisy rotations are snapped to the nearest exact one.
    let r = if err > 1e-9 {
        let svd = r.svd(true, true);
        svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
    } else {
        r
    };
    let mut cam = Camera::new(e.fx, e.fy, e.cx, e.cy, e.width, e.height, r, t)
        .map_err(|err| Error::load(manifest, format!("frame {i} ({}): {err}", e.name)))?;
    cam.near = e.near.unwrap_or(DEFAULT_NEAR);
    cam.validate()
        .map_err(|err| Error::load(manifest, format!("frame {i} ({}): {err}", e.name)))?;
    Ok(cam)
}

pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::load(&manifest_path, e.to_string()))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::load(
            &manifest_path,
            format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            ),
        ));
    }
    if m.test_every == 0 {
        return Err(Error::load(&manifest_path, "test_every must be at least 1"));
    }
    let mut frames = Vec::with_capacity(m.frames.len());
    for (i, e) in m.frames.iter().enumerate() {
        let camera = camera_from_entry(e, i, &manifest_path)?;
        let image = read_image(&dir.join(&e.image))?;
        if image.width() != e.width || image.height() != e.height {
            return Err(Error::load(
                &manifest_path,
                format!(
                    "frame {i} ({}): image is {}x{}, manifest says {}x{}",
                    e.name,
                    image.width(),
                    image.height(),
                    e.width,
                    e.height
                ),
            ));
        }
        let depth = match &e.depth {
            Some(p) => {
                let d = pfm::read_pfm(&dir.join(p))?;
                if d.width() != e.width || d.height() != e.height || d.channels() != 1 {
                    return Err(Error::load(
                        &manifest_path,
                        format!("frame {i} ({}): depth map size mismatch", e.name),
                    ));
                }
                Some(d)
            }
            None => None,
        };
        frames.push(Frame {
            name: e.name.clone(),
            camera,
            image,
            depth,
        });
    }
    let point_cloud = m
        .point_cloud
        .as_ref()
        .map(|p| ply::read_ply(&dir.join(p)))
        .transpose()?;
    let reference_model = m
        .reference_model
        .as_ref()
        .map(|p| checkpoint::load_checkpoint(&dir.join(p)).map(|c| c.cloud))
        .transpose()?;
    let ds = SceneDataset {
        frames,
        test_every: m.test_every,
        point_cloud,
        reference_model,
        background: Vector3::from(m.background),
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a scene directory; images and depths go out as PFM so reloading is
/// bit-exact for f32-representable data.
pub fn save_scene(ds: &SceneDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir.join("images"))?;
    let mut entries = Vec::with_capacity(ds.frames.len());
    let has_depth = ds.frames.iter().any(|f| f.depth.is_some());
    if has_depth {
        std::fs::create_dir_all(dir.join("depths"))?;
    }
    for f in &ds.frames {
        let image = format!("images/{}.pfm", f.name);
        pfm::write_pfm(&dir.join(&image), &f.image)?;
        let depth = match &f.depth {
            Some(d) => {
                let p = format!("depths/{}.pfm", f.name);
                pfm::write_pfm(&dir.join(&p), d)?;
                Some(p)
            }
            None => None,
        };
        let c = &f.camera;
        let r = &c.rotation;
        let t = &c.translation;
        entries.push(FrameEntry {
            name: f.name.clone(),
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_to_camera: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            ],
            near: (c.near != DEFAULT_NEAR).then_some(c.near),
            image,
            depth,
        });
    }
    let point_cloud = match &ds.point_cloud {
        Some(pc) => {
            ply::write_ply(&dir.join("points.ply"), pc)?;
            Some("points.ply".to_string())
        }
        None => None,
    };
    let reference_model = match &ds.reference_model {
        Some(m) => {
            checkpoint::save_checkpoint(&dir.join("reference.bin"), m, None, 0)?;
            Some("reference.bin".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        background: [ds.background.x, ds.background.y, ds.background.z],
        test_every: ds.test_every,
        point_cloud,
        reference_model,
        frames: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}
