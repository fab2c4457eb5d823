//! Image and depth quality metrics and held-out evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::checkpoint::model_bytes;
use crate::io::SceneDataset;
use crate::loss::ssim::ssim;
use crate::raster::render;
use crate::scene::{Camera, GaussianCloud};

pub const PSNR_CAP: f64 = 99.0;
/// Pixels whose predicted accumulated opacity exceeds this, and that have a
/// positive reference depth, enter the depth correlation. It compares
/// alpha-normalized (surface) depths.
pub const SROCC_ALPHA_MASK: f64 = 0.5;
pub const NOT_COMPUTED: &str = "not computed";

/// `10 log10(1 / MSE)` for images in [0, 1]; identical images give [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    if a.is_empty() {
        return Err(Error::Undefined("psnr of empty images".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("rank correlation of a constant depth map".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation between two depth maps over the masked pixels.
pub fn depth_srocc(pred: &Image, reference: &Image, mask: Option<&[bool]>) -> Result<f64> {
    pred.ensure_same_shape(reference, "depth_srocc")?;
    if pred.channels() != 1 {
        return Err(Error::Shape(format!(
            "depth maps have one channel, got {}",
            pred.channels()
        )));
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                pred.len()
            )));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let (x, y): (Vec<f64>, Vec<f64>) = (0..pred.len())
        .filter(|&i| keep(i))
        .map(|i| (pred.data()[i], reference.data()[i]))
        .unzip();
    if x.len() < 2 {
        return Err(Error::Undefined(format!("{} valid pixels, need at least 2", x.len())));
    }
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::Undefined("non-finite depth".into()));
    }
    pearson(&average_ranks(&x), &average_ranks(&y))
}

/// One held-out view; `image` may be missing, in which case it is skipped and flagged.
#[derive(Debug, Clone)]
pub struct EvalView {
    pub name: String,
    pub camera: Camera,
    pub image: Option<Image>,
    pub depth: Option<Image>,
}

impl EvalView {
    /// The held-out frames of `ds` in manifest order.
    pub fn test_set(ds: &SceneDataset) -> Vec<EvalView> {
        ds.test_frames()
            .into_iter()
            .map(|f| EvalView {
                name: f.name.clone(),
                camera: f.camera.clone(),
                image: Some(f.image.clone()),
                depth: f.depth.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub depth_srocc: Option<f64>,
    pub status: String,
}

/// Frame-wise agreement with a reference model along a camera path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMetrics {
    pub frames: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_srocc: Option<f64>,
    pub gaussian_count: usize,
    pub model_bytes: usize,
    pub trajectory: Option<TrajectoryMetrics>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn eval_view(model: &GaussianCloud, v: &EvalView) -> Result<ViewMetrics> {
    let Some(gt) = &v.image else {
        return Ok(ViewMetrics {
            name: v.name.clone(),
            psnr: None,
            ssim: None,
            depth_srocc: None,
            status: "skipped: missing ground truth".into(),
        });
    };
    let out = render(model, &v.camera)?;
    let p = psnr(&out.color, gt)?;
    let s = ssim(&out.color, gt)?.value;
    let mut status = "ok".to_string();
    let srocc = match &v.depth {
        Some(d) => {
            let mask: Vec<bool> = out
                .accum_alpha
                .data()
                .iter()
                .zip(d.data())
                .map(|(&a, &r)| a > SROCC_ALPHA_MASK && r > 0.0 && r.is_finite())
                .collect();
            match depth_srocc(&out.surface_depth(), d, Some(&mask)) {
                Ok(r) => Some(r),
                Err(Error::Undefined(why)) => {
                    status = format!("srocc undefined: {why}");
                    None
                }
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    Ok(ViewMetrics {
        name: v.name.clone(),
        psnr: Some(p),
        ssim: Some(s),
        depth_srocc: srocc,
        status,
    })
}

/// Renders each view in parallel and assembles the report in view order.
pub fn evaluate(model: &GaussianCloud, views: &[EvalView]) -> Result<EvalReport> {
    let metrics = views
        .par_iter()
        .map(|v| eval_view(model, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        mean_psnr: mean(metrics.iter().map(|m| m.psnr)),
        mean_ssim: mean(metrics.iter().map(|m| m.ssim)),
        mean_srocc: mean(metrics.iter().map(|m| m.depth_srocc)),
        views: metrics,
        gaussian_count: model.len(),
        model_bytes: model_bytes(model),
        trajectory: None,
    })
}

/// Mean frame-wise PSNR and SSIM of `model` against `reference` along `path`.
pub fn trajectory_metrics(
    model: &GaussianCloud,
    reference: &GaussianCloud,
    path: &[Camera],
) -> Result<TrajectoryMetrics> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let per: Vec<(f64, f64)> = path
        .par_iter()
        .map(|cam| {
            let a = render(model, cam)?.color;
            let b = render(reference, cam)?.color;
            Ok((psnr(&a, &b)?, ssim(&a, &b)?.value))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(TrajectoryMetrics {
        frames: per.len(),
        mean_psnr: per.iter().map(|p| p.0).sum::<f64>() / n,
        mean_ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl EvalReport {
    /// CSV with one `view` row per view, one `mean` row and, when available,
    /// one `trajectory` row. LPIPS is always reported as not computed.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record([
            "kind",
            "name",
            "psnr",
            "ssim",
            "depth_srocc",
            "lpips",
            "gaussian_count",
            "model_bytes",
            "status",
        ])
        .map_err(io)?;
        for v in &self.views {
            w.write_record([
                "view",
                &v.name,
                &cell(v.psnr),
                &cell(v.ssim),
                &cell(v.depth_srocc),
                NOT_COMPUTED,
                "",
                "",
                &v.status,
            ])
            .map_err(io)?;
        }
        let status = if self.mean_psnr.is_some() {
            "ok"
        } else {
            "undefined: no evaluated views"
        };
        w.write_record([
            "mean",
            "",
            &cell(self.mean_psnr),
            &cell(self.mean_ssim),
            &cell(self.mean_srocc),
            NOT_COMPUTED,
            &self.gaussian_count.to_string(),
            &self.model_bytes.to_string(),
            status,
        ])
        .map_err(io)?;
        match &self.trajectory {
            Some(t) => w.write_record([
                "trajectory",
                &format!("{} frames", t.frames),
                &cell(Some(t.mean_psnr)),
                &cell(Some(t.mean_ssim)),
                "",
                NOT_COMPUTED,
                "",
                "",
                "ok",
            ]),
            None => w.write_record(["trajectory", "", "", "", "", NOT_COMPUTED, "", "", NOT_COMPUTED]),
        }
        .map_err(io)?;
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let f = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "undefined".into());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "views evaluated: {}",
            self.views.iter().filter(|v| v.psnr.is_some()).count()
        );
        for v in self.views.iter().filter(|v| v.status != "ok") {
            let _ = writeln!(s, "  {}: {}", v.name, v.status);
        }
        let _ = writeln!(s, "PSNR  {} dB", f(self.mean_psnr, 2));
        let _ = writeln!(s, "SSIM  {}", f(self.mean_ssim, 4));
        let _ = writeln!(s, "depth SROCC  {}", f(self.mean_srocc, 4));
        let _ = writeln!(s, "LPIPS  {NOT_COMPUTED}");
        match &self.trajectory {
            Some(t) => {
                let _ = writeln!(
                    s,
                    "trajectory ({} frames): PSNR {:.2} dB, SSIM {:.4}",
                    t.frames, t.mean_psnr, t.mean_ssim
                );
            }
            None => {
                let _ = writeln!(s, "trajectory: {NOT_COMPUTED}");
            }
        }
        let _ = writeln!(
            s,
            "gaussians {}  model size {} bytes",
            self.gaussian_count, self.model_bytes
        );
        s
    }
}
