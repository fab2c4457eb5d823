//! Synthetic scenes rendered by the engine itself, with exact depth maps.

use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::io::{Frame, PointCloud, SceneDataset};
use crate::raster::render;
use crate::scene::{Camera, Gaussian3D, GaussianCloud, SH_C0};

pub const SYNTH_SIZE: usize = 64;
pub const SYNTH_FRAMES: usize = 32;
pub const SYNTH_FOCAL: f64 = 80.0;
pub const SYNTH_RADIUS: f64 = 4.0;
/// Half-angles of the viewing cap, in degrees.
pub const SYNTH_AZIMUTH: f64 = 25.0;
pub const SYNTH_ELEVATION: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    /// Twenty flat blobs in the plane z = 0, mirror-symmetric in x.
    FlatCard,
    /// Fifty flat Gaussians forming four boxes on three depth layers.
    LayeredBoxes,
    /// Sixty round Gaussians with view-dependent color scattered in a box.
    TexturedSphereField,
}

impl SynthPreset {
    pub const ALL: [SynthPreset; 3] = [
        SynthPreset::FlatCard,
        SynthPreset::LayeredBoxes,
        SynthPreset::TexturedSphereField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthPreset::FlatCard => "flat-card",
            SynthPreset::LayeredBoxes => "layered-boxes",
            SynthPreset::TexturedSphereField => "textured-sphere-field",
        }
    }
}

impl FromStr for SynthPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown preset {s:?} (flat-card, layered-boxes, textured-sphere-field)"
            ))
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub dataset: SceneDataset,
    pub ground_truth: GaussianCloud,
}

/// Layer depths (world z) of the layered-boxes preset, back to front.
pub const BOX_LAYERS: [f64; 3] = [-0.6, 0.0, 0.6];

/// Cameras on a cap of the sphere of radius [`SYNTH_RADIUS`] facing the
/// origin, visited along a golden-angle spiral so that every-8th subsets
/// spread over the cap.
pub fn synth_rig(n: usize) -> Result<Vec<Camera>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let r = ((i as f64 + 0.5) / n as f64).sqrt();
            let theta = i as f64 * golden;
            let az = (SYNTH_AZIMUTH * r * theta.cos()).to_radians();
            let el = (SYNTH_ELEVATION * r * theta.sin()).to_radians();
            let eye = SYNTH_RADIUS * Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), SYNTH_FOCAL, SYNTH_SIZE, SYNTH_SIZE)
        })
        .collect()
}

fn flat(mu: Vector3<f64>, sigma: f64, thickness: f64, opacity: f64, rgb: Vector3<f64>) -> Gaussian3D {
    let mut g = Gaussian3D::isotropic(mu, sigma, opacity, rgb, 0);
    g.log_scale.z = thickness.ln();
    g
}

fn quantized_rgb<R: Rng + ?Sized>(base: Vector3<f64>, jitter: f64, rng: &mut R) -> Vector3<f64> {
    base.map(|c| ((c + jitter * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

fn flat_card<R: Rng + ?Sized>(rng: &mut R) -> Vec<Gaussian3D> {
    let xs = [0.2, 0.6];
    let ys = [-0.8, -0.4, 0.0, 0.4, 0.8];
    let mut out = Vec::new();
    for &y in &ys {
        for &x in &xs {
            let rgb = quantized_rgb(Vector3::repeat(0.5), 0.45, rng);
            out.push(flat(Vector3::new(-x, y, 0.0), 0.05, 0.002, 0.9, rgb));
            out.push(flat(Vector3::new(x, y, 0.0), 0.05, 0.002, 0.9, rgb));
        }
    }
    out
}

fn layered_boxes<R: Rng + ?Sized>(rng: &mut R) -> Vec<Gaussian3D> {
    // (layer, center x, center y, columns, rows, spacing, sigma, base color)
    let boxes = [
        (0, 0.0, 0.0, 5, 4, 0.6, 0.5, Vector3::new(0.25, 0.35, 0.7)),
        (1, -0.5, 0.3, 3, 3, 0.25, 0.22, Vector3::new(0.85, 0.3, 0.2)),
        (1, 0.55, -0.35, 3, 3, 0.25, 0.22, Vector3::new(0.3, 0.8, 0.35)),
        (2, 0.1, 0.15, 4, 3, 0.2, 0.18, Vector3::new(0.9, 0.85, 0.3)),
    ];
    let mut out = Vec::new();
    for (layer, cx, cy, cols, rows, spacing, sigma, base) in boxes {
        for j in 0..rows {
            for i in 0..cols {
                let x = cx + (i as f64 - (cols - 1) as f64 / 2.0) * spacing;
                let y = cy + (j as f64 - (rows - 1) as f64 / 2.0) * spacing;
                let rgb = quantized_rgb(base, 0.12, rng);
                out.push(flat(Vector3::new(x, y, BOX_LAYERS[layer]), sigma, 0.01, 0.95, rgb));
            }
        }
    }
    out
}

fn sphere_field<R: Rng + ?Sized>(rng: &mut R) -> Vec<Gaussian3D> {
    (0..60)
        .map(|_| {
            let mu = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.8..0.8),
            );
            let rgb = quantized_rgb(Vector3::repeat(0.5), 0.45, rng);
            let mut g = Gaussian3D::isotropic(mu, rng.random_range(0.08..0.2), rng.random_range(0.8..0.95), rgb, 1);
            for c in g.sh.iter_mut().skip(1) {
                *c = Vector3::from_fn(|_, _| 0.15 * rng.sample::<f64, _>(StandardNormal));
            }
            g
        })
        .collect()
}

/// Builds the ground truth, renders every rig view and assembles a dataset.
///
/// The ground truth is passed through the checkpoint encoding first and the
/// renders are stored f32-quantized, so writing the dataset to disk and
/// reading it back reproduces it exactly.
pub fn synth_scene<R: Rng + ?Sized>(preset: SynthPreset, rng: &mut R) -> Result<SynthScene> {
    let (gaussians, degree) = match preset {
        SynthPreset::FlatCard => (flat_card(rng), 0),
        SynthPreset::LayeredBoxes => (layered_boxes(rng), 0),
        SynthPreset::TexturedSphereField => (sphere_field(rng), 1),
    };
    let raw = GaussianCloud::with_gaussians(gaussians, degree, Vector3::zeros())?;
    let gt = decode_checkpoint(&encode_checkpoint(&raw, None, 0)?)?.cloud;

    let cams = synth_rig(SYNTH_FRAMES)?;
    let mut frames = Vec::with_capacity(cams.len());
    for (i, cam) in cams.into_iter().enumerate() {
        let out = render(&gt, &cam)?;
        frames.push(Frame {
            name: format!("{i:03}"),
            camera: cam,
            image: out.color.quantize_f32(),
            depth: Some(out.surface_depth().quantize_f32()),
        });
    }

    let mut pc = PointCloud::default();
    for g in &gt.gaussians {
        let jitter = Vector3::from_fn(|_, _| 0.03 * rng.sample::<f64, _>(StandardNormal));
        pc.positions.push(g.mu + jitter);
        let rgb = (g.sh[0] * SH_C0).add_scalar(0.5);
        pc.colors.push(rgb.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() / 255.0));
    }

    let dataset = SceneDataset {
        frames,
        test_every: 8,
        point_cloud: Some(pc),
        reference_model: Some(gt.clone()),
        background: gt.background,
    };
    dataset.validate()?;
    Ok(SynthScene {
        dataset,
        ground_truth: gt,
    })
}
