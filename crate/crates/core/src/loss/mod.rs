//! Training objectives with analytic gradients w.r.t. rendered images and depths.
//!
//! * photometric: `(1 - λ_ssim)·mean|v - gt| + λ_ssim·(1 - SSIM)`
//! * pseudo-view consistency: the photometric form between two models' renders
//! * edge-aware depth smoothness: `Σ ‖∇d‖₁·exp(-‖∇v‖₁) - λ_r·(d_max - d_min)`
//! * total smoothness over a train and a pseudo view, and the weighted sum of all three

pub mod ssim;

pub use ssim::{ssim, SsimValue, C1, C2, WINDOW_RADIUS, WINDOW_SIGMA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_r: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Keep the edge-aware gradient term of the smoothness loss. Turning it off
    /// leaves only the depth-range reward.
    pub edge_smoothness: bool,
    /// How the training objective reduces the edge-aware sum over pixels.
    pub smoothness_reduction: Reduction,
}

/// Reduction of a per-pixel sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    /// Sum divided by the pixel count.
    #[default]
    Mean,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_r: 0.001,
            omega1: 0.01,
            omega2: 0.05,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            edge_smoothness: true,
            smoothness_reduction: Reduction::Mean,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_r", self.lambda_r),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda_ssim must be <= 1, got {}",
                self.lambda_ssim
            )));
        }
        Ok(())
    }
}

/// Scalar loss and its gradient w.r.t. one image.
#[derive(Debug, Clone)]
pub struct ImageLoss {
    pub value: f64,
    pub grad: Image,
}

/// Scalar loss and its gradients w.r.t. two images.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub value: f64,
    pub grad_a: Image,
    pub grad_b: Image,
}

fn l1_pair(a: &Image, b: &Image) -> (f64, Image, Image) {
    let n = a.len().max(1) as f64;
    let mut ga = Image::zeros(a.width(), a.height(), a.channels());
    let mut gb = ga.clone();
    let mut sum = 0.0;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let d = x - y;
        sum += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        ga.data_mut()[i] = s / n;
        gb.data_mut()[i] = -s / n;
    }
    (sum / n, ga, gb)
}

fn photometric_pair(a: &Image, b: &Image, lambda_ssim: f64) -> Result<PairLoss> {
    a.ensure_same_shape(b, "photometric loss")?;
    if !(0.0..=1.0).contains(&lambda_ssim) {
        return Err(Error::InvalidParameter(format!(
            "lambda_ssim must lie in [0, 1], got {lambda_ssim}"
        )));
    }
    let (l1, mut ga, mut gb) = l1_pair(a, b);
    let w1 = 1.0 - lambda_ssim;
    ga.data_mut().iter_mut().for_each(|v| *v *= w1);
    gb.data_mut().iter_mut().for_each(|v| *v *= w1);
    let mut value = w1 * l1;
    if lambda_ssim > 0.0 {
        let s = ssim(a, b)?;
        value += lambda_ssim * (1.0 - s.value);
        for (g, d) in ga.data_mut().iter_mut().zip(s.grad_a.data()) {
            *g -= lambda_ssim * d;
        }
        for (g, d) in gb.data_mut().iter_mut().zip(s.grad_b.data()) {
            *g -= lambda_ssim * d;
        }
    }
    Ok(PairLoss {
        value,
        grad_a: ga,
        grad_b: gb,
    })
}

/// Photometric loss of a render `v` against ground truth; gradient w.r.t. `v`.
pub fn photometric_loss(v: &Image, v_gt: &Image, lambda_ssim: f64) -> Result<ImageLoss> {
    let p = photometric_pair(v, v_gt, lambda_ssim)?;
    Ok(ImageLoss {
        value: p.value,
        grad: p.grad_a,
    })
}

/// Photometric agreement of two renders of the same pseudo view; both receive gradient.
pub fn pseudo_view_consistency(u1: &Image, u2: &Image, lambda_ssim: f64) -> Result<PairLoss> {
    photometric_pair(u1, u2, lambda_ssim)
}

/// The two parts of the edge-aware depth smoothness, kept separate so either can be disabled.
#[derive(Debug, Clone)]
pub struct SmoothnessTerms {
    pub smooth: f64,
    pub smooth_grad: Image,
    /// Gradient of `smooth` w.r.t. the guide image through the edge weights.
    pub smooth_grad_guide: Image,
    /// `d_max - d_min`.
    pub range: f64,
    pub argmax: usize,
    pub argmin: usize,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn smoothness_terms(d: &Image, v: &Image) -> Result<SmoothnessTerms> {
    if d.channels() != 1 {
        return Err(Error::Shape(format!(
            "depth must have one channel, got {}",
            d.channels()
        )));
    }
    if d.width() != v.width() || d.height() != v.height() {
        return Err(Error::Shape(format!(
            "depth is {}x{}, image is {}x{}",
            d.width(),
            d.height(),
            v.width(),
            v.height()
        )));
    }
    if d.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("depth map contains non-finite values".into()));
    }
    let (w, h) = (d.width(), d.height());
    let mut grad = Image::zeros(w, h, 1);
    let mut grad_guide = Image::zeros(w, h, v.channels());
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let here = d.get(x, y, 0);
            let mut neighbors = [None, None];
            if x + 1 < w {
                neighbors[0] = Some((x + 1, y));
            }
            if y + 1 < h {
                neighbors[1] = Some((x, y + 1));
            }
            let mut edge = 0.0;
            let mut step = 0.0;
            for &(nx, ny) in neighbors.iter().flatten() {
                for c in 0..v.channels() {
                    edge += (v.get(nx, ny, c) - v.get(x, y, c)).abs();
                }
                step += (d.get(nx, ny, 0) - here).abs();
            }
            let weight = (-edge).exp();
            smooth += step * weight;
            for &(nx, ny) in neighbors.iter().flatten() {
                let s = sign(d.get(nx, ny, 0) - here) * weight;
                let gi = grad.index(nx, ny, 0);
                grad.data_mut()[gi] += s;
                let gi = grad.index(x, y, 0);
                grad.data_mut()[gi] -= s;
                // d weight / d edge = -weight
                for c in 0..v.channels() {
                    let g = -step * weight * sign(v.get(nx, ny, c) - v.get(x, y, c));
                    let gi = grad_guide.index(nx, ny, c);
                    grad_guide.data_mut()[gi] += g;
                    let gi = grad_guide.index(x, y, c);
                    grad_guide.data_mut()[gi] -= g;
                }
            }
        }
    }
    let (mut argmax, mut argmin) = (0, 0);
    for (i, &val) in d.data().iter().enumerate() {
        if val > d.data()[argmax] {
            argmax = i;
        }
        if val < d.data()[argmin] {
            argmin = i;
        }
    }
    let range = if d.is_empty() {
        0.0
    } else {
        d.data()[argmax] - d.data()[argmin]
    };
    Ok(SmoothnessTerms {
        smooth,
        smooth_grad: grad,
        smooth_grad_guide: grad_guide,
        range,
        argmax,
        argmin,
    })
}

/// Depth smoothness with gradients w.r.t. both the depth and the guide image.
struct GuidedLoss {
    value: f64,
    grad_d: Image,
    grad_v: Image,
}

/// `edge` selects the reduction of the edge-aware sum, or drops it.
fn smoothness_loss(d: &Image, v: &Image, lambda_r: f64, edge: Option<Reduction>) -> Result<GuidedLoss> {
    let t = smoothness_terms(d, v)?;
    let (value, mut grad_d, grad_v) = match edge {
        Some(Reduction::Sum) => (t.smooth, t.smooth_grad, t.smooth_grad_guide),
        Some(Reduction::Mean) => {
            let n = d.len().max(1) as f64;
            (
                t.smooth / n,
                t.smooth_grad.map(|g| g / n),
                t.smooth_grad_guide.map(|g| g / n),
            )
        }
        None => (
            0.0,
            Image::zeros(d.width(), d.height(), 1),
            Image::zeros(v.width(), v.height(), v.channels()),
        ),
    };
    if !d.is_empty() {
        grad_d.data_mut()[t.argmax] -= lambda_r;
        grad_d.data_mut()[t.argmin] += lambda_r;
    }
    Ok(GuidedLoss {
        value: value - lambda_r * t.range,
        grad_d,
        grad_v,
    })
}

/// Edge-aware depth smoothness of depth `d` guided by image `v`; gradient w.r.t. `d`.
pub fn depth_smoothness(d: &Image, v: &Image, lambda_r: f64) -> Result<ImageLoss> {
    let l = smoothness_loss(d, v, lambda_r, Some(Reduction::Sum))?;
    Ok(ImageLoss {
        value: l.value,
        grad: l.grad_d,
    })
}

#[derive(Debug, Clone)]
pub struct TotalSmoothness {
    pub value: f64,
    pub train: f64,
    pub pseudo: f64,
    pub grad_d: Image,
    pub grad_d_pseudo: Image,
    /// Gradient w.r.t. the train-view image through the edge weights.
    pub grad_v: Image,
    /// Gradient w.r.t. the pseudo-view image through the edge weights.
    pub grad_u: Image,
}

/// `ω₁·L_ds(d, v) + ω₂·L_ds(d_u, u)`.
pub fn total_depth_smoothness(
    v: &Image,
    d: &Image,
    u: &Image,
    d_u: &Image,
    omega1: f64,
    omega2: f64,
    lambda_r: f64,
) -> Result<TotalSmoothness> {
    total_smoothness_impl(v, d, u, d_u, omega1, omega2, lambda_r, Some(Reduction::Sum))
}

#[allow(clippy::too_many_arguments)]
fn total_smoothness_impl(
    v: &Image,
    d: &Image,
    u: &Image,
    d_u: &Image,
    omega1: f64,
    omega2: f64,
    lambda_r: f64,
    edge: Option<Reduction>,
) -> Result<TotalSmoothness> {
    let a = smoothness_loss(d, v, lambda_r, edge)?;
    let b = smoothness_loss(d_u, u, lambda_r, edge)?;
    Ok(TotalSmoothness {
        value: omega1 * a.value + omega2 * b.value,
        train: a.value,
        pseudo: b.value,
        grad_d: a.grad_d.map(|g| g * omega1),
        grad_d_pseudo: b.grad_d.map(|g| g * omega2),
        grad_v: a.grad_v.map(|g| g * omega1),
        grad_u: b.grad_v.map(|g| g * omega2),
    })
}

/// Low-phase objective for one model and its gradient routing.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub value: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub pseudo: f64,
    /// Gradient w.r.t. the train-view render `v_k`.
    pub grad_v: Image,
    /// Gradient w.r.t. the train-view depth `d_k`.
    pub grad_d: Image,
    /// Gradient w.r.t. this model's pseudo-view render `u_k`.
    pub grad_u: Image,
    /// Gradient w.r.t. this model's pseudo-view depth `d_uk`.
    pub grad_d_pseudo: Image,
}

/// `λ₁·photometric + λ₂·smoothness + λ₃·pseudo`.
pub fn weighted_total(weights: &LossWeights, photometric: f64, smoothness: f64, pseudo: f64) -> f64 {
    weights.lambda1 * photometric + weights.lambda2 * smoothness + weights.lambda3 * pseudo
}

/// `λ₁·L_ph(v_k, gt) + λ₂·L_tds + λ₃·L_pseudo(u_k, u_other)`.
///
/// The other model's pseudo render is a constant here; it receives the
/// symmetric term when its own loss is evaluated. Sub-losses whose weight is
/// zero are skipped entirely.
pub fn combined_loss(
    v_k: &Image,
    v_gt: &Image,
    d_k: &Image,
    u_k: &Image,
    d_uk: &Image,
    u_other: &Image,
    weights: &LossWeights,
) -> Result<CombinedLoss> {
    weights.validate()?;
    let ph = photometric_loss(v_k, v_gt, weights.lambda_ssim)?;
    let mut grad_v = ph.grad;
    grad_v.data_mut().iter_mut().for_each(|g| *g *= weights.lambda1);
    let mut grad_d = Image::zeros(d_k.width(), d_k.height(), 1);
    let mut grad_d_pseudo = Image::zeros(d_uk.width(), d_uk.height(), 1);
    let mut grad_u = Image::zeros(u_k.width(), u_k.height(), u_k.channels());

    let mut smoothness = 0.0;
    if weights.lambda2 > 0.0 {
        let tds = total_smoothness_impl(
            v_k,
            d_k,
            u_k,
            d_uk,
            weights.omega1,
            weights.omega2,
            weights.lambda_r,
            weights.edge_smoothness.then_some(weights.smoothness_reduction),
        )?;
        smoothness = tds.value;
        for (g, t) in grad_d.data_mut().iter_mut().zip(tds.grad_d.data()) {
            *g = weights.lambda2 * t;
        }
        for (g, t) in grad_d_pseudo.data_mut().iter_mut().zip(tds.grad_d_pseudo.data()) {
            *g = weights.lambda2 * t;
        }
        for (g, t) in grad_v.data_mut().iter_mut().zip(tds.grad_v.data()) {
            *g += weights.lambda2 * t;
        }
        for (g, t) in grad_u.data_mut().iter_mut().zip(tds.grad_u.data()) {
            *g = weights.lambda2 * t;
        }
    }

    let mut pseudo = 0.0;
    if weights.lambda3 > 0.0 {
        let p = pseudo_view_consistency(u_k, u_other, weights.lambda_ssim)?;
        pseudo = p.value;
        for (g, t) in grad_u.data_mut().iter_mut().zip(p.grad_a.data()) {
            *g += weights.lambda3 * t;
        }
    }

    Ok(CombinedLoss {
        value: weighted_total(weights, ph.value, smoothness, pseudo),
        photometric: ph.value,
        smoothness,
        pseudo,
        grad_v,
        grad_d,
        grad_u,
        grad_d_pseudo,
    })
}
