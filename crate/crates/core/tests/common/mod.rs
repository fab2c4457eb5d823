//! Shared fixtures and finite-difference oracles for the integration tests.
#![allow(dead_code)]

use adsplat::raster::pixel_contributors;
use adsplat::scene::{eval_sh_color, logit, rgb_to_sh_dc, sh_coeff_count, sigmoid};
use adsplat::{render, render_backward, Camera, Gaussian3D, GaussianCloud, Image};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;

/// Ten (by default) random anisotropic Gaussians in front of a 32x32 camera.
///
/// Opacities stay in [0.2, 0.9] so the 0.99 alpha clamp is never reached, and
/// SH coefficients are small so colors stay inside (0, 1).
pub fn random_scene(seed: u64, n: usize, size: usize, degree: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::look_at(
        Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        size as f64 * 1.2,
        size,
        size,
    )
    .unwrap();
    let gaussians = (0..n)
        .map(|_| {
            let mut sh = vec![Vector3::zeros(); sh_coeff_count(degree)];
            sh[0] = rgb_to_sh_dc(Vector3::from_fn(|_, _| rng.random_range(0.25..0.75)));
            for c in sh.iter_mut().skip(1) {
                *c = Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15));
            }
            let q = [
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            Gaussian3D {
                mu: Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(0.08f64..0.4).ln()),
                quat: q,
                opacity_logit: logit(rng.random_range(0.2..0.9)),
                sh,
            }
        })
        .collect();
    let bg = Vector3::new(0.1, 0.2, 0.3);
    (GaussianCloud::with_gaussians(gaussians, degree, bg).unwrap(), cam)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
    Image::from_fn(w, h, c, |_, _, _| rng.random_range(lo..hi))
}

pub fn dot(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub const CLASSES: [&str; 5] = ["mu", "log_scale", "quat", "opacity_logit", "sh"];

/// Flat parameter index to class name.
pub fn class_of(k: usize) -> usize {
    match k {
        0..=2 => 0,
        3..=5 => 1,
        6..=9 => 2,
        10 => 3,
        _ => 4,
    }
}

#[derive(Debug, Default, Clone)]
pub struct FdStats {
    /// Worst per-scene class error `|a - n| / |n|` over the class's gradient vector.
    pub max_rel: [f64; 5],
    /// Worst single-entry error `|a - n| / max(|a|, |n|, 1e-6 * class max)`.
    pub max_rel_entry: [f64; 5],
    /// Parameters compared per class.
    pub compared: [usize; 5],
    pub total: usize,
    /// Perturbations that change which Gaussians reach some pixel (or their
    /// order); the live image jumps there.
    pub discontinuous: usize,
}

impl FdStats {
    pub fn merge(&mut self, o: &FdStats) {
        for k in 0..5 {
            self.max_rel[k] = self.max_rel[k].max(o.max_rel[k]);
            self.max_rel_entry[k] = self.max_rel_entry[k].max(o.max_rel_entry[k]);
            self.compared[k] += o.compared[k];
        }
        self.total += o.total;
        self.discontinuous += o.discontinuous;
    }

    pub fn worst(&self) -> f64 {
        self.max_rel.iter().cloned().fold(0.0, f64::max)
    }

    pub fn worst_entry(&self) -> f64 {
        self.max_rel_entry.iter().cloned().fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn quat_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

struct RefSplat {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    color: Vector3<f64>,
    opacity: f64,
}

fn ref_project(g: &Gaussian3D, cam: &Camera, degree: usize) -> RefSplat {
    let p = cam.rotation * g.mu + cam.translation;
    let (x, y, z) = (p.x, p.y, p.z);
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let r = quat_matrix(g.quat);
    let s2 = Matrix3::from_diagonal(&g.log_scale.map(|v| (2.0 * v).exp()));
    let sigma = r * s2 * r.transpose();
    let t = jac * cam.rotation;
    let cov = t * sigma * t.transpose() + Matrix2::identity() * 0.3;
    let dir = (g.mu - cam.center()).normalize();
    RefSplat {
        mean: Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy),
        conic: cov.try_inverse().unwrap(),
        depth: z,
        color: eval_sh_color(&g.sh, degree, &dir).unwrap(),
        opacity: sigmoid(g.opacity_logit),
    }
}

/// Brute-force compositing with every pixel's contributor list held fixed.
/// With `contributors` taken at the evaluation point it equals the renderer;
/// held at a base point it is the smooth branch the analytic gradient
/// differentiates.
pub fn frozen_render(cloud: &GaussianCloud, cam: &Camera, contributors: &[Vec<usize>]) -> (Image, Image) {
    let splats: Vec<RefSplat> = cloud
        .gaussians
        .iter()
        .map(|g| ref_project(g, cam, cloud.sh_degree))
        .collect();
    let mut color = Image::zeros(cam.width, cam.height, 3);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let p = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            let mut d = 0.0;
            for &i in &contributors[py * cam.width + px] {
                let s = &splats[i];
                let v = p - s.mean;
                let alpha = (s.opacity * (-0.5 * (v.transpose() * s.conic * v)[0]).exp()).min(0.99);
                c += s.color * alpha * t;
                d += s.depth * alpha * t;
                t *= 1.0 - alpha;
            }
            c += cloud.background * t;
            for k in 0..3 {
                color.set(px, py, k, c[k]);
            }
            depth.set(px, py, 0, d);
        }
    }
    (color, depth)
}

/// Compares `render_backward` against central differences (step `h`) of `L = <U, color> + <V, depth>` evaluated by
/// [`frozen_render`] with the base point's contributor lists, for every
/// scalar parameter. Also counts how many perturbations change the
/// renderer's contributor lists.
pub fn render_fd_check(cloud: &GaussianCloud, cam: &Camera, seed: u64, h: f64) -> FdStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let up = random_image(&mut rng, cam.width, cam.height, 3, -1.0, 1.0);
    let up_d = random_image(&mut rng, cam.width, cam.height, 1, -0.2, 0.2);
    let sig = pixel_contributors(cloud, cam).unwrap();
    let objective = |c: &GaussianCloud| {
        let (col, dep) = frozen_render(c, cam, &sig);
        dot(&up, &col) + dot(&up_d, &dep)
    };
    let bundle = render_backward(cloud, cam, &up, Some(&up_d)).unwrap();

    let mut stats = FdStats::default();
    let mut analytic = Vec::new();
    let mut params = Vec::new();
    let mut scale = [0.0f64; 5];
    let mut pairs: Vec<(usize, f64, f64)> = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        analytic.clear();
        bundle.grads[i].write_flat(&mut analytic);
        params.clear();
        g.write_params(&mut params);
        for k in 0..params.len() {
            stats.total += 1;
            let mut plus = cloud.clone();
            let mut minus = cloud.clone();
            let mut p = params.clone();
            p[k] += h;
            plus.gaussians[i] = Gaussian3D::from_params(&p).unwrap();
            p[k] -= 2.0 * h;
            minus.gaussians[i] = Gaussian3D::from_params(&p).unwrap();
            if pixel_contributors(&plus, cam).unwrap() != sig || pixel_contributors(&minus, cam).unwrap() != sig {
                stats.discontinuous += 1;
            }
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let c = class_of(k);
            scale[c] = scale[c].max(analytic[k].abs()).max(numeric.abs());
            pairs.push((c, analytic[k], numeric));
        }
    }
    let mut diff2 = [0.0; 5];
    let mut norm2 = [0.0; 5];
    for (c, a, n) in pairs {
        diff2[c] += (a - n) * (a - n);
        norm2[c] += n * n;
        let e = rel_err(a, n, 1e-6 * scale[c]);
        stats.max_rel_entry[c] = stats.max_rel_entry[c].max(e);
        stats.compared[c] += 1;
    }
    for c in 0..5 {
        if norm2[c] > 0.0 {
            stats.max_rel[c] = (diff2[c] / norm2[c]).sqrt();
        }
    }
    stats
}

/// Renderer output and the frozen reference at the same point.
pub fn forward_agreement(cloud: &GaussianCloud, cam: &Camera) -> f64 {
    let sig = pixel_contributors(cloud, cam).unwrap();
    let out = render(cloud, cam).unwrap();
    let (c, d) = frozen_render(cloud, cam, &sig);
    out.color.max_abs_diff(&c).max(out.depth.max_abs_diff(&d))
}

/// Every channel is a random permutation of `w·h` evenly spaced levels in
/// `[lo, hi]`, so neighboring values never tie and there is a unique extremum.
pub fn lattice_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
    let n = w * h;
    let mut img = Image::zeros(w, h, c);
    for ch in 0..c {
        let mut levels: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            levels.swap(i, rng.random_range(0..=i));
        }
        for (p, &k) in levels.iter().enumerate() {
            img.set(p % w, p / w, ch, lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64);
        }
    }
    img
}

/// `base` shifted entrywise by `±U[min, max]` with random sign.
pub fn offset_image(rng: &mut ChaCha8Rng, base: &Image, min: f64, max: f64) -> Image {
    let mut out = base.clone();
    for v in out.data_mut() {
        let o = rng.random_range(min..max);
        *v += if rng.random::<bool>() { o } else { -o };
    }
    out
}

/// Errors of an analytic image gradient against central differences.
#[derive(Debug, Clone, Copy)]
pub struct ImageFd {
    /// `‖a - n‖ / ‖n‖` over the checked entries.
    pub norm_rel: f64,
    /// Worst entry, relative to `max(|n|, 1e-3·max|n|)`.
    pub entry_rel: f64,
    /// Directional derivatives along random dense directions.
    pub directional_rel: f64,
    pub checked: usize,
}

impl ImageFd {
    pub fn worst(&self) -> f64 {
        self.norm_rel.max(self.entry_rel).max(self.directional_rel)
    }
}

/// Central differences of `f` at `x`. `samples` limits the entrywise check to
/// that many random entries; three dense random directions are checked too.
pub fn image_fd_check(
    f: impl Fn(&Image) -> f64,
    x: &Image,
    analytic: &Image,
    h: f64,
    samples: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> ImageFd {
    assert!(x.same_shape(analytic));
    let idx: Vec<usize> = match samples {
        Some(k) if k < x.len() => (0..k).map(|_| rng.random_range(0..x.len())).collect(),
        _ => (0..x.len()).collect(),
    };
    let mut probe = x.clone();
    let mut pairs = Vec::with_capacity(idx.len());
    for &i in &idx {
        let v = x.data()[i];
        probe.data_mut()[i] = v + h;
        let fp = f(&probe);
        probe.data_mut()[i] = v - h;
        let fm = f(&probe);
        probe.data_mut()[i] = v;
        pairs.push((analytic.data()[i], (fp - fm) / (2.0 * h)));
    }
    let scale = pairs.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    let (mut num, mut den, mut entry) = (0.0, 0.0, 0.0f64);
    for &(a, n) in &pairs {
        num += (a - n) * (a - n);
        den += n * n;
        entry = entry.max(rel_err(a, n, 1e-3 * scale));
    }
    let mut directional = 0.0f64;
    for _ in 0..3 {
        let dir = random_image(rng, x.width(), x.height(), x.channels(), -1.0, 1.0);
        let shifted = |t: f64| {
            let mut y = x.clone();
            for (v, d) in y.data_mut().iter_mut().zip(dir.data()) {
                *v += t * d;
            }
            y
        };
        let n = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
        directional = directional.max(rel_err(dot(analytic, &dir), n, 1e-12));
    }
    ImageFd {
        norm_rel: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        entry_rel: entry,
        directional_rel: directional,
        checked: idx.len(),
    }
}
