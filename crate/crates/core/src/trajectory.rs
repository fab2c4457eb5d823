//! Camera paths for video-style renders.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::io::camera_extent;
use crate::io::init::axes_focus;
use crate::scene::Camera;

/// A closed spiral of `frames` cameras around the mean training pose, all
/// aimed at the point nearest every optical axis. Intrinsics come from the
/// first camera.
pub fn spiral_trajectory(cams: &[Camera], frames: usize) -> Result<Vec<Camera>> {
    let first = cams
        .first()
        .ok_or_else(|| Error::InvalidParameter("spiral needs at least one camera".into()))?;
    if frames == 0 {
        return Err(Error::InvalidParameter("spiral needs at least one frame".into()));
    }
    let refs: Vec<&Camera> = cams.iter().collect();
    let n = cams.len() as f64;
    let center = cams.iter().map(|c| c.center()).sum::<Vector3<f64>>() / n;
    let mean_fwd = cams.iter().map(|c| c.forward()).sum::<Vector3<f64>>();
    let fwd = mean_fwd.try_normalize(1e-12).unwrap_or_else(|| first.forward());
    let focus = axes_focus(&refs).unwrap_or(center + fwd * camera_extent(&refs).max(1.0) * 2.0);
    // Image "down" averaged over cameras; world up is its negation.
    let down = cams.iter().map(|c| c.rotation.row(1).transpose()).sum::<Vector3<f64>>();
    let up = (-down).try_normalize(1e-12).unwrap_or(Vector3::y());
    let right = fwd.cross(&up).try_normalize(1e-12).unwrap_or(Vector3::x());
    let up = right.cross(&fwd);

    let spread = |axis: &Vector3<f64>| {
        cams.iter()
            .map(|c| (c.center() - center).dot(axis).abs())
            .fold(0.0, f64::max)
    };
    let dist = (focus - center).norm().max(1e-6);
    let rx = spread(&right).max(0.05 * dist);
    let ry = spread(&up).max(0.05 * dist);
    let rz = spread(&fwd).max(0.02 * dist);

    (0..frames)
        .map(|i| {
            let t = i as f64 / frames as f64 * std::f64::consts::TAU;
            let eye = center + right * (rx * t.cos()) + up * (ry * t.sin()) + fwd * (rz * (0.5 * t).sin());
            let mut cam = Camera::look_at(eye, focus, up, first.fx, first.width, first.height)?;
            cam.fy = first.fy;
            cam.cx = first.cx;
            cam.cy = first.cy;
            cam.near = first.near;
            Ok(cam)
        })
        .collect()
}
