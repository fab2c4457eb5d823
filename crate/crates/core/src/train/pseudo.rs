//! Pseudo-view sampling: small rigid perturbations of training cameras.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Camera;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoViewConfig {
    pub max_angle_deg: f64,
    /// Translation radius as a fraction of the scene extent.
    pub max_trans_frac: f64,
}

impl Default for PseudoViewConfig {
    fn default() -> Self {
        Self {
            max_angle_deg: 3.0,
            max_trans_frac: 0.02,
        }
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Picks a training camera uniformly, rotates it about its own center by a
/// random axis and an angle in `[0, max_angle_deg)`, then moves the center
/// by a vector drawn uniformly from the ball of radius
/// `max_trans_frac * scene_extent`. Intrinsics are kept.
pub fn sample_pseudo_view<R: Rng + ?Sized>(
    train_cams: &[Camera],
    rng: &mut R,
    max_angle_deg: f64,
    max_trans_frac: f64,
    scene_extent: f64,
) -> Result<Camera> {
    if train_cams.is_empty() {
        return Err(Error::InvalidParameter("no training cameras to perturb".into()));
    }
    if !(max_angle_deg >= 0.0) || !(max_trans_frac >= 0.0) || !(scene_extent >= 0.0) {
        return Err(Error::InvalidParameter(
            "perturbation bounds must be nonnegative".into(),
        ));
    }
    let base = &train_cams[rng.random_range(0..train_cams.len())];
    let angle = max_angle_deg.to_radians() * rng.random::<f64>();
    let axis = Unit::new_unchecked(unit_vector(rng));
    let radius = max_trans_frac * scene_extent * rng.random::<f64>().cbrt();
    let offset = unit_vector(rng) * radius;
    if angle == 0.0 && radius == 0.0 {
        return Ok(base.clone());
    }

    let delta = Rotation3::from_axis_angle(&axis, angle);
    let rotation = delta.matrix() * base.rotation;
    let center = base.center() + offset;
    let mut cam = base.clone();
    cam.rotation = rotation;
    cam.translation = -(rotation * center);
    Ok(cam)
}
