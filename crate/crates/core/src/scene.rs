//! Gaussian primitives, pinhole cameras, covariance construction and SH color.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

pub const MAX_SH_DEGREE: usize = 2;

/// Number of SH coefficients per color channel for `degree`.
#[inline]
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree whose coefficient count is `count`, if it is a supported degree.
pub fn sh_degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| sh_coeff_count(d) == count)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian primitive.
///
/// Scale and opacity are stored unconstrained (log and logit). `sh[k]` holds
/// the RGB coefficients of basis function `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mu: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`, not necessarily unit length.
    pub quat: [f64; 4],
    pub opacity_logit: f64,
    pub sh: Vec<Vector3<f64>>,
}

impl Gaussian3D {
    /// Isotropic, unrotated primitive with a flat color.
    pub fn isotropic(mu: Vector3<f64>, scale: f64, opacity: f64, rgb: Vector3<f64>, degree: usize) -> Self {
        let mut sh = vec![Vector3::zeros(); sh_coeff_count(degree)];
        sh[0] = rgb_to_sh_dc(rgb);
        Self {
            mu,
            log_scale: Vector3::repeat(scale.ln()),
            quat: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            sh,
        }
    }

    #[inline]
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh_degree_for_count(self.sh.len())
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.quat.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Number of scalar parameters: 3 + 3 + 4 + 1 + 3K.
    pub fn param_count(&self) -> usize {
        11 + 3 * self.sh.len()
    }

    /// Appends the parameters in storage order: mu, log_scale, quat,
    /// opacity_logit, then SH coefficients (RGB per basis function).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.mu.iter());
        out.extend(self.log_scale.iter());
        out.extend(self.quat);
        out.push(self.opacity_logit);
        for c in &self.sh {
            out.extend(c.iter());
        }
    }

    /// Inverse of [`Gaussian3D::write_params`]; `p.len()` fixes the SH count.
    pub fn from_params(p: &[f64]) -> Result<Self> {
        if p.len() < 11 || (p.len() - 11) % 3 != 0 || sh_degree_for_count((p.len() - 11) / 3).is_none() {
            return Err(Error::Shape(format!("{} is not a valid parameter count", p.len())));
        }
        Ok(Self {
            mu: Vector3::new(p[0], p[1], p[2]),
            log_scale: Vector3::new(p[3], p[4], p[5]),
            quat: [p[6], p[7], p[8], p[9]],
            opacity_logit: p[10],
            sh: p[11..]
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }
}

/// DC coefficient that evaluates to `rgb` under the +0.5 convention.
pub fn rgb_to_sh_dc(rgb: Vector3<f64>) -> Vector3<f64> {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

/// Pinhole camera with a world-to-camera rigid transform `x_cam = R x + t`.
///
/// Camera looks down +z, pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, image `y` axis roughly along `-up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("look_at: eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("look_at: up parallel to view".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be at least 1x1".into()));
        }
        if !(self.near > 0.0) {
            return Err(Error::InvalidParameter("near plane must be positive".into()));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if !(err <= 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Ordered collection of primitives sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub sh_degree: usize,
    pub background: Vector3<f64>,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize, background: Vector3<f64>) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "sh degree {sh_degree} exceeds the supported maximum {MAX_SH_DEGREE}"
            )));
        }
        Ok(Self {
            gaussians: Vec::new(),
            sh_degree,
            background,
        })
    }

    pub fn with_gaussians(gaussians: Vec<Gaussian3D>, sh_degree: usize, background: Vector3<f64>) -> Result<Self> {
        let mut cloud = Self::new(sh_degree, background)?;
        cloud.gaussians = gaussians;
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        let k = sh_coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != k {
                return Err(Error::Shape(format!(
                    "gaussian {i} has {} SH coefficients, cloud degree {} needs {k}",
                    g.sh.len(),
                    self.sh_degree
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) {
        return Err(Error::InvalidParameter(format!("quaternion norm {n:e} is too small")));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
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

/// Pulls a gradient w.r.t. the rotation matrix back to the raw (unnormalized) quaternion.
pub(crate) fn rotation_grad_to_quat(q_raw: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = q_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = [q_raw[0] / n, q_raw[1] / n, q_raw[2] / n, q_raw[3] / n];
    let g = |i: usize, j: usize| d_r[(i, j)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let d_unit = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = d_unit.iter().zip(&qn).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (d_unit[k] - qn[k] * dot) / n;
    }
    out
}

/// `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))` and `R` from the normalized quaternion.
pub fn build_covariance(log_scale: &Vector3<f64>, quat: [f64; 4]) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(normalize_quat(quat)?);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let cov = m * m.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

/// Real SH basis values up to `degree` for a unit direction.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> Vec<f64> {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = Vec::with_capacity(sh_coeff_count(degree));
    b.push(SH_C0);
    if degree >= 1 {
        b.push(-SH_C1 * y);
        b.push(SH_C1 * z);
        b.push(-SH_C1 * x);
    }
    if degree >= 2 {
        b.push(SH_C2[0] * x * y);
        b.push(SH_C2[1] * y * z);
        b.push(SH_C2[2] * (2.0 * z * z - x * x - y * y));
        b.push(SH_C2[3] * x * z);
        b.push(SH_C2[4] * (x * x - y * y));
    }
    b
}

/// Partial derivatives of each basis function w.r.t. the (unnormalized) direction components.
pub(crate) fn sh_basis_jacobian(degree: usize, dir: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut j = Vec::with_capacity(sh_coeff_count(degree));
    j.push(Vector3::zeros());
    if degree >= 1 {
        j.push(Vector3::new(0.0, -SH_C1, 0.0));
        j.push(Vector3::new(0.0, 0.0, SH_C1));
        j.push(Vector3::new(-SH_C1, 0.0, 0.0));
    }
    if degree >= 2 {
        j.push(SH_C2[0] * Vector3::new(y, x, 0.0));
        j.push(SH_C2[1] * Vector3::new(0.0, z, y));
        j.push(SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z));
        j.push(SH_C2[3] * Vector3::new(z, 0.0, x));
        j.push(SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0));
    }
    j
}

/// Unclamped color `Σ_k basis_k · sh_k + 0.5`.
pub(crate) fn sh_color_raw(sh: &[Vector3<f64>], degree: usize, dir: &Vector3<f64>) -> Vector3<f64> {
    let basis = sh_basis(degree, dir);
    let mut c = Vector3::repeat(0.5);
    for (b, coeff) in basis.iter().zip(sh) {
        c += *b * coeff;
    }
    c
}

/// View-dependent RGB color, clamped to `[0, 1]`.
pub fn eval_sh_color(sh: &[Vector3<f64>], degree: usize, view_dir: &Vector3<f64>) -> Result<Vector3<f64>> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidParameter(format!("sh degree {degree} unsupported")));
    }
    if sh.len() != sh_coeff_count(degree) {
        return Err(Error::Shape(format!(
            "degree {degree} needs {} SH coefficients per channel, got {}",
            sh_coeff_count(degree),
            sh.len()
        )));
    }
    let norm = view_dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("view direction norm {norm} is not 1")));
    }
    Ok(sh_color_raw(sh, degree, view_dir).map(|c| c.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn covariance_identity() {
        let c = build_covariance(&Vector3::zeros(), [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(c, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn covariance_axis_aligned() {
        let c = build_covariance(&Vector3::new(2f64.ln(), 0.0, 0.0), [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rotated_about_z() {
        // 90 degrees about z: q = (cos 45, 0, 0, sin 45). Oracle: explicit R·diag(4,1,1)·Rᵀ.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = build_covariance(&Vector3::new(2f64.ln(), 0.0, 0.0), [h, 0.0, 0.0, h]).unwrap();
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = r * Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)) * r.transpose();
        assert_relative_eq!(
            expected,
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-15
        );
        assert_relative_eq!(c, expected, epsilon = 1e-12);
    }

    #[test]
    fn covariance_rejects_zero_quat() {
        assert!(matches!(
            build_covariance(&Vector3::zeros(), [0.0; 4]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn quat_normalization() {
        assert_eq!(normalize_quat([1.0, 0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(normalize_quat([2.0, 0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        let q = normalize_quat([1.0, 1.0, 1.0, 1.0]).unwrap();
        for v in q {
            assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        }
        assert!(normalize_quat([1e-13, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sh_zero_is_half_gray() {
        let sh = vec![Vector3::zeros(); 9];
        let c = eval_sh_color(&sh, 2, &Vector3::new(0.0, 0.6, 0.8)).unwrap();
        assert_eq!(c, Vector3::repeat(0.5));
    }

    #[test]
    fn sh_dc_saturates() {
        let sh = vec![Vector3::repeat(1.0 / SH_C0)];
        let c = eval_sh_color(&sh, 0, &Vector3::z()).unwrap();
        assert_relative_eq!(c, Vector3::repeat(1.0), epsilon = 1e-15);
    }

    #[test]
    fn sh_linear_z_band_is_odd() {
        let mut sh = vec![Vector3::zeros(); 4];
        sh[2] = Vector3::new(0.3, 0.1, -0.2);
        let up = eval_sh_color(&sh, 1, &Vector3::z()).unwrap();
        let down = eval_sh_color(&sh, 1, &-Vector3::z()).unwrap();
        // Oracle: basis value of the z band at ±z is ±C1.
        let band = sh[2] * SH_C1;
        assert_relative_eq!(up - down, 2.0 * band, epsilon = 1e-15);
    }

    #[test]
    fn sh_shape_error() {
        let sh = vec![Vector3::zeros(); 3];
        assert!(matches!(eval_sh_color(&sh, 1, &Vector3::z()), Err(Error::Shape(_))));
    }

    #[test]
    fn sh_basis_jacobian_matches_differences() {
        let d = Vector3::new(0.3, -0.5, 0.7);
        let jac = sh_basis_jacobian(2, &d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let bp = sh_basis(2, &dp);
            let bm = sh_basis(2, &dm);
            for k in 0..9 {
                assert_relative_eq!((bp[k] - bm[k]) / (2.0 * h), jac[k][axis], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn camera_rejects_bad_rotation() {
        let r = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Camera::new(10.0, 10.0, 5.0, 5.0, 10, 10, r, Vector3::zeros()).is_err());
        assert!(Camera::new(0.0, 10.0, 5.0, 5.0, 10, 10, Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(
            Vector3::new(1.0, 2.0, -3.0),
            Vector3::zeros(),
            -Vector3::y(),
            50.0,
            32,
            32,
        )
        .unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        assert!(p.z > 0.0);
        assert_relative_eq!(cam.center(), Vector3::new(1.0, 2.0, -3.0), epsilon = 1e-12);
    }

    fn arb_quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("nonzero", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
    }

    fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        let [aw, ax, ay, az] = a;
        let [bw, bx, by, bz] = b;
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    }

    proptest! {
        #[test]
        fn covariance_is_spd(q in arb_quat(), ls in prop::array::uniform3(-3.0f64..2.0)) {
            let c = build_covariance(&Vector3::from(ls), q).unwrap();
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12);
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.min() > 0.0);
        }

        #[test]
        fn covariance_rotation_equivariant(q in arb_quat(), r in arb_quat(), ls in prop::array::uniform3(-2.0f64..1.0)) {
            let ls = Vector3::from(ls);
            let lhs = build_covariance(&ls, quat_mul(r, q)).unwrap();
            let rm = quat_to_rotation(normalize_quat(r).unwrap());
            let rhs = rm * build_covariance(&ls, q).unwrap() * rm.transpose();
            prop_assert!((lhs - rhs).abs().max() <= 1e-9);
        }

        #[test]
        fn degree0_is_view_independent(c in prop::array::uniform3(-2.0f64..2.0), a in prop::array::uniform3(-1.0f64..1.0), b in prop::array::uniform3(-1.0f64..1.0)) {
            let (a, b) = (Vector3::from(a), Vector3::from(b));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let sh = vec![Vector3::from(c)];
            let ca = eval_sh_color(&sh, 0, &a.normalize()).unwrap();
            let cb = eval_sh_color(&sh, 0, &b.normalize()).unwrap();
            prop_assert_eq!(ca, cb);
        }
    }
}
