//! Adaptive-moment optimizer with per-group step sizes over flat Gaussian rows.

use serde::{Deserialize, Serialize};

use crate::density::RowSource;
use crate::error::{Error, Result};
use crate::raster::GradBundle;
use crate::scene::{Gaussian3D, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Position step size at the first iteration, in units of scene extent.
    pub lr_position_init: f64,
    /// Position step size reached at the last iteration, in units of scene extent.
    pub lr_position_final: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_scale: 0.005,
            lr_rotation: 0.001,
            lr_opacity: 0.05,
            lr_sh_dc: 0.0025,
            lr_sh_rest: 0.0025 / 20.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        let rates = [
            self.lr_position_init,
            self.lr_position_final,
            self.lr_scale,
            self.lr_rotation,
            self.lr_opacity,
            self.lr_sh_dc,
            self.lr_sh_rest,
        ];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("step sizes must be finite and nonnegative".into()));
        }
        if (self.lr_position_init > 0.0) != (self.lr_position_final > 0.0) {
            return Err(Error::Config(
                "position step sizes must be both zero or both positive".into(),
            ));
        }
        Ok(())
    }

    /// Step sizes at iteration `t` of `total`; the position rate decays
    /// log-linearly from `init` to `final` and is scaled by `scene_extent`.
    pub fn step_sizes(&self, t: usize, total: usize, scene_extent: f64) -> StepSizes {
        let s = if total > 0 {
            (t as f64 / total as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let position = if self.lr_position_init > 0.0 {
            (self.lr_position_init.ln() * (1.0 - s) + self.lr_position_final.ln() * s).exp()
        } else {
            0.0
        };
        StepSizes {
            position: position * scene_extent,
            scale: self.lr_scale,
            rotation: self.lr_rotation,
            opacity: self.lr_opacity,
            sh_dc: self.lr_sh_dc,
            sh_rest: self.lr_sh_rest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl StepSizes {
    /// Step size of flat parameter index `k` (see [`Gaussian3D::write_params`]).
    fn for_index(&self, k: usize) -> f64 {
        match k {
            0..=2 => self.position,
            3..=5 => self.scale,
            6..=9 => self.rotation,
            10 => self.opacity,
            11..=13 => self.sh_dc,
            _ => self.sh_rest,
        }
    }
}

/// First and second moments, one row of `row_len` values per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub row_len: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateReport {
    /// Gaussians whose update was skipped because of a non-finite gradient.
    pub skipped: usize,
}

impl OptimizerState {
    pub fn new(rows: usize, sh_degree: usize) -> Self {
        let row_len = 11 + 3 * crate::scene::sh_coeff_count(sh_degree);
        Self {
            step: 0,
            row_len,
            m: vec![0.0; rows * row_len],
            v: vec![0.0; rows * row_len],
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.row_len
    }

    /// Carries moments through a densify/prune; new rows start at zero.
    pub fn remap(&mut self, rows: &[RowSource]) {
        let n = self.row_len;
        let pick = |buf: &[f64]| {
            let mut out = Vec::with_capacity(rows.len() * n);
            for r in rows {
                match r {
                    RowSource::Existing(i) => out.extend_from_slice(&buf[i * n..(i + 1) * n]),
                    RowSource::New => out.extend(std::iter::repeat_n(0.0, n)),
                }
            }
            out
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    /// One adaptive-moment step on every Gaussian of `cloud`.
    pub fn update(
        &mut self,
        cloud: &mut GaussianCloud,
        grads: &GradBundle,
        lr: &StepSizes,
        cfg: &OptimizerConfig,
    ) -> Result<UpdateReport> {
        if grads.len() != cloud.len() || self.rows() != cloud.len() {
            return Err(Error::Shape(format!(
                "optimizer has {} rows, gradients {}, cloud {}",
                self.rows(),
                grads.len(),
                cloud.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let n = self.row_len;
        let mut report = UpdateReport::default();
        let mut p = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for (i, gauss) in cloud.gaussians.iter_mut().enumerate() {
            if !grads.grads[i].is_finite() {
                report.skipped += 1;
                continue;
            }
            p.clear();
            g.clear();
            gauss.write_params(&mut p);
            grads.grads[i].write_flat(&mut g);
            if p.len() != n || g.len() != n {
                return Err(Error::Shape(format!(
                    "row {i} has {} parameters, optimizer expects {n}",
                    p.len()
                )));
            }
            let m = &mut self.m[i * n..(i + 1) * n];
            let v = &mut self.v[i * n..(i + 1) * n];
            for k in 0..n {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr.for_index(k) * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            *gauss = Gaussian3D::from_params(&p)?;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GradBundle;
    use nalgebra::Vector3;

    fn one_gaussian() -> GaussianCloud {
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vector3::repeat(0.3), 0);
        GaussianCloud::with_gaussians(vec![g], 0, Vector3::zeros()).unwrap()
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let c = OptimizerConfig::default();
        let s0 = c.step_sizes(0, 100, 2.0);
        let s_mid = c.step_sizes(50, 100, 2.0);
        let s1 = c.step_sizes(100, 100, 2.0);
        assert!((s0.position - 3.2e-4).abs() < 1e-18);
        assert!((s_mid.position - 3.2e-5).abs() < 1e-15);
        assert!((s1.position - 3.2e-6).abs() < 1e-18);
        assert_eq!(s0.opacity, s1.opacity);
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let cfg = OptimizerConfig::default();
        let mut cloud = one_gaussian();
        let mut opt = OptimizerState::new(1, 0);
        opt.m.iter_mut().for_each(|v| *v = 1.0);
        opt.v.iter_mut().for_each(|v| *v = 1.0);
        let before = cloud.clone();
        let lr = StepSizes {
            position: 0.0,
            scale: 0.0,
            rotation: 0.0,
            opacity: 0.0,
            sh_dc: 0.0,
            sh_rest: 0.0,
        };
        opt.update(&mut cloud, &GradBundle::zeros(1, 1), &lr, &cfg).unwrap();
        assert_eq!(cloud, before);
        assert!(opt.m.iter().all(|&v| (v - 0.9).abs() < 1e-15));
        assert!(opt.v.iter().all(|&v| (v - 0.999).abs() < 1e-15));

        // With nonzero rates a zero gradient still leaves parameters alone
        // once the moments are zero.
        let mut fresh = OptimizerState::new(1, 0);
        fresh
            .update(&mut cloud, &GradBundle::zeros(1, 1), &cfg.step_sizes(0, 10, 1.0), &cfg)
            .unwrap();
        assert_eq!(cloud, before);
    }

    #[test]
    fn quadratic_converges() {
        // L = (x - 3)^2 on mu.x; minimum at x = 3.
        let cfg = OptimizerConfig {
            lr_position_init: 0.05,
            lr_position_final: 0.05,
            eps: 1e-8,
            ..Default::default()
        };
        let mut cloud = one_gaussian();
        let mut opt = OptimizerState::new(1, 0);
        for t in 0..500 {
            let mut g = GradBundle::zeros(1, 1);
            g.grads[0].mu.x = 2.0 * (cloud.gaussians[0].mu.x - 3.0);
            opt.update(&mut cloud, &g, &cfg.step_sizes(t, 500, 1.0), &cfg).unwrap();
        }
        assert!(
            (cloud.gaussians[0].mu.x - 3.0).abs() < 1e-2,
            "x = {}",
            cloud.gaussians[0].mu.x
        );
    }

    #[test]
    fn nan_gradient_skips_row() {
        let cfg = OptimizerConfig::default();
        let mut cloud = one_gaussian();
        cloud.gaussians.push(cloud.gaussians[0].clone());
        let mut opt = OptimizerState::new(2, 0);
        let mut g = GradBundle::zeros(2, 1);
        g.grads[0].mu.x = f64::NAN;
        g.grads[1].mu.x = 1.0;
        let before = cloud.clone();
        let r = opt.update(&mut cloud, &g, &cfg.step_sizes(0, 10, 1.0), &cfg).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(cloud.gaussians[0], before.gaussians[0]);
        assert!(cloud.gaussians[1].mu.x < before.gaussians[1].mu.x);
        assert!(opt.m[..opt.row_len].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn remap_drops_and_adds_rows() {
        let mut opt = OptimizerState::new(3, 0);
        for (i, v) in opt.m.iter_mut().enumerate() {
            *v = (i / 14) as f64 + 1.0;
        }
        opt.remap(&[RowSource::Existing(0), RowSource::Existing(2), RowSource::New]);
        assert_eq!(opt.rows(), 3);
        assert!(opt.m[..14].iter().all(|&v| v == 1.0));
        assert!(opt.m[14..28].iter().all(|&v| v == 3.0));
        assert!(opt.m[28..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let cfg = OptimizerConfig::default();
        let mut cloud = one_gaussian();
        let mut opt = OptimizerState::new(2, 0);
        assert!(opt
            .update(&mut cloud, &GradBundle::zeros(1, 1), &cfg.step_sizes(0, 1, 1.0), &cfg)
            .is_err());
    }
}
