//! Perspective projection of 3D Gaussians to screen-space splats (EWA affine
//! approximation) and the adjoint of that map.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::{
    normalize_quat, quat_to_rotation, rotation_grad_to_quat, sh_basis, sh_basis_jacobian, sh_color_raw, Camera,
    Gaussian3D,
};

use super::{ALPHA_MIN, LOWPASS_FLOOR};

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates of the projected mean.
    pub mean2d: Vector2<f64>,
    /// Screen covariance including the low-pass floor.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
    pub source_index: usize,
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Screen radius beyond which `alpha < ALPHA_MIN`.
    pub radius: f64,
    /// Inclusive pixel bounds `[x0, x1] x [y0, y1]` of the footprint, clipped to the viewport.
    pub rect: [usize; 4],
}

/// Gradient of a loss with respect to one splat's screen-space quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScreenGrad {
    pub mean2d: Vector2<f64>,
    /// `dL/d(a, b, c)` for `conic = [[a, b], [b, c]]`.
    pub conic: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub depth: f64,
}

impl ScreenGrad {
    pub(crate) fn add(&mut self, o: &ScreenGrad) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
        self.depth += o.depth;
    }
}

/// Per-parameter gradient of one Gaussian, laid out like [`Gaussian3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub quat: [f64; 4],
    pub opacity_logit: f64,
    pub sh: Vec<Vector3<f64>>,
}

impl GaussianGrad {
    pub fn zeros(sh_count: usize) -> Self {
        Self {
            mu: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            quat: [0.0; 4],
            opacity_logit: 0.0,
            sh: vec![Vector3::zeros(); sh_count],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.quat.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Appends the gradient in [`Gaussian3D::write_params`] order.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend(self.mu.iter());
        out.extend(self.log_scale.iter());
        out.extend(self.quat);
        out.push(self.opacity_logit);
        for c in &self.sh {
            out.extend(c.iter());
        }
    }

    pub fn add_assign(&mut self, o: &GaussianGrad) {
        self.mu += o.mu;
        self.log_scale += o.log_scale;
        for k in 0..4 {
            self.quat[k] += o.quat[k];
        }
        self.opacity_logit += o.opacity_logit;
        for (a, b) in self.sh.iter_mut().zip(&o.sh) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mu *= s;
        self.log_scale *= s;
        for q in &mut self.quat {
            *q *= s;
        }
        self.opacity_logit *= s;
        for c in &mut self.sh {
            *c *= s;
        }
    }
}

/// Jacobian of `(x, y, z) -> (fx x/z + cx, fy y/z + cy)`.
fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz2,
    )
}

struct Geometry {
    rotation: Matrix3<f64>,
    scale: Vector3<f64>,
    t: Vector3<f64>,
    jac: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
}

fn geometry(g: &Gaussian3D, cam: &Camera) -> Option<Geometry> {
    let t = cam.to_camera(&g.mu);
    if !(t.z > cam.near) {
        return None;
    }
    let q = normalize_quat(g.quat).ok()?;
    let rotation = quat_to_rotation(q);
    let scale = g.scale();
    let m = rotation * Matrix3::from_diagonal(&scale);
    let cov_cam = cam.rotation * (m * m.transpose()) * cam.rotation.transpose();
    let jac = projection_jacobian(cam, &t);
    Some(Geometry {
        rotation,
        scale,
        t,
        jac,
        cov_cam,
    })
}

fn view_dir(g: &Gaussian3D, cam: &Camera) -> Vector3<f64> {
    (g.mu - cam.center()).normalize()
}

/// Screen covariance before the low-pass floor is added.
pub fn raw_cov2d(g: &Gaussian3D, cam: &Camera) -> Option<Matrix2<f64>> {
    let geo = geometry(g, cam)?;
    Some(geo.jac * geo.cov_cam * geo.jac.transpose())
}

/// Projects `g` (stored at `index` in its cloud). Returns `None` when the
/// Gaussian lies at or behind the near plane, or its visible footprint misses
/// the viewport.
pub fn project_gaussian(g: &Gaussian3D, index: usize, cam: &Camera, sh_degree: usize) -> Option<Splat2D> {
    let geo = geometry(g, cam)?;
    let raw = geo.jac * geo.cov_cam * geo.jac.transpose();
    let raw = (raw + raw.transpose()) * 0.5;
    let cov2d = raw + Matrix2::identity() * LOWPASS_FLOOR;
    let conic = cov2d.try_inverse()?;
    let iz = 1.0 / geo.t.z;
    let mean2d = Vector2::new(cam.fx * geo.t.x * iz + cam.cx, cam.fy * geo.t.y * iz + cam.cy);
    let opacity = g.opacity();

    // alpha >= ALPHA_MIN needs 0.5 dᵀ conic d <= ln(o / ALPHA_MIN); that
    // ellipse spans sqrt(2 ln(o / ALPHA_MIN) cov_xx) horizontally (same for y)
    // and lies within the circle of radius sqrt(2 ln(o / ALPHA_MIN) lambda_max).
    if opacity < ALPHA_MIN {
        return None;
    }
    let lambda_max = {
        let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
        let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
        mid + (mid * mid - det).max(0.0).sqrt()
    };
    let level = 2.0 * (opacity / ALPHA_MIN).ln();
    let pad = |v: f64| (level * v).sqrt() * (1.0 + 1e-6) + 1e-6;
    let radius = pad(lambda_max);
    let (rx, ry) = (pad(cov2d[(0, 0)]), pad(cov2d[(1, 1)]));

    let x0 = (mean2d.x - rx - 0.5).ceil();
    let x1 = (mean2d.x + rx - 0.5).floor();
    let y0 = (mean2d.y - ry - 0.5).ceil();
    let y1 = (mean2d.y + ry - 0.5).floor();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
        return None;
    }
    let rect = [
        x0.max(0.0) as usize,
        x1.min(w - 1.0) as usize,
        y0.max(0.0) as usize,
        y1.min(h - 1.0) as usize,
    ];

    let color = sh_color_raw(&g.sh, sh_degree, &view_dir(g, cam)).map(|c| c.clamp(0.0, 1.0));
    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: geo.t.z,
        source_index: index,
        color,
        opacity,
        radius,
        rect,
    })
}

/// Chains a screen-space gradient back to the Gaussian's parameters.
pub fn project_backward(g: &Gaussian3D, cam: &Camera, sh_degree: usize, sg: &ScreenGrad) -> GaussianGrad {
    let mut out = GaussianGrad::zeros(g.sh.len());
    let Some(geo) = geometry(g, cam) else {
        return out;
    };
    let raw = geo.jac * geo.cov_cam * geo.jac.transpose();
    let cov2d = (raw + raw.transpose()) * 0.5 + Matrix2::identity() * LOWPASS_FLOOR;
    let Some(conic) = cov2d.try_inverse() else {
        return out;
    };

    // conic -> cov2d
    let g_conic = Matrix2::new(sg.conic.x, 0.5 * sg.conic.y, 0.5 * sg.conic.y, sg.conic.z);
    let g_cov2d = -(conic * g_conic * conic);

    // cov2d = J Σc Jᵀ
    let g_cov_cam = geo.jac.transpose() * g_cov2d * geo.jac;
    let g_jac = 2.0 * g_cov2d * geo.jac * geo.cov_cam;
    let g_cov3d = cam.rotation.transpose() * g_cov_cam * cam.rotation;

    // Σ = (R S)(R S)ᵀ
    let m = geo.rotation * Matrix3::from_diagonal(&geo.scale);
    let g_m = 2.0 * g_cov3d * m;
    let mut g_rot = Matrix3::zeros();
    for j in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += g_m[(i, j)] * geo.rotation[(i, j)];
            g_rot[(i, j)] = g_m[(i, j)] * geo.scale[j];
        }
        out.log_scale[j] = ds * geo.scale[j];
    }
    out.quat = rotation_grad_to_quat(g.quat, &g_rot);

    // camera-space mean
    let t = geo.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut g_t = Vector3::zeros();
    g_t.x += g_jac[(0, 2)] * (-fx * iz2);
    g_t.y += g_jac[(1, 2)] * (-fy * iz2);
    g_t.z += g_jac[(0, 0)] * (-fx * iz2)
        + g_jac[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_jac[(1, 1)] * (-fy * iz2)
        + g_jac[(1, 2)] * (2.0 * fy * t.y * iz3);
    g_t.x += sg.mean2d.x * fx * iz;
    g_t.z -= sg.mean2d.x * fx * t.x * iz2;
    g_t.y += sg.mean2d.y * fy * iz;
    g_t.z -= sg.mean2d.y * fy * t.y * iz2;
    g_t.z += sg.depth;
    out.mu = cam.rotation.transpose() * g_t;

    // opacity
    let o = g.opacity();
    out.opacity_logit = sg.opacity * o * (1.0 - o);

    // color
    let offset = g.mu - cam.center();
    let dist = offset.norm();
    let dir = offset / dist;
    let raw_color = sh_color_raw(&g.sh, sh_degree, &dir);
    let mut g_color = sg.color;
    for c in 0..3 {
        if !(raw_color[c] > 0.0 && raw_color[c] < 1.0) {
            g_color[c] = 0.0;
        }
    }
    let basis = sh_basis(sh_degree, &dir);
    for (k, b) in basis.iter().enumerate() {
        out.sh[k] = g_color * *b;
    }
    if sh_degree > 0 {
        let jac = sh_basis_jacobian(sh_degree, &dir);
        let mut g_dir = Vector3::zeros();
        for (k, j) in jac.iter().enumerate() {
            g_dir += *j * g.sh[k].dot(&g_color);
        }
        out.mu += (g_dir - dir * dir.dot(&g_dir)) / dist;
    }
    out
}
