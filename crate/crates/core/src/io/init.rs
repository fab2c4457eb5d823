//! Initial Gaussian clouds from a point cloud or from random samples inside
//! the region every training camera sees.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::io::SceneDataset;
use crate::scene::{logit, rgb_to_sh_dc, sh_coeff_count, Camera, Gaussian3D, GaussianCloud};

pub const INIT_OPACITY: f64 = 0.1;
pub const RANDOM_INIT_COUNT: usize = 1000;
const MIN_DISTANCE: f64 = 1e-7;

/// Mean distance from every point to its `k` nearest neighbors (fewer when
/// the cloud is smaller). Single points get `NaN`.
///
/// Points are swept in x order; the scan in each direction stops once the x
/// gap alone exceeds the current k-th best distance.
pub fn knn_mean_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![f64::NAN; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (pos, &i) in order.iter().enumerate() {
        best.clear();
        let p = points[i];
        let consider = |j: usize, best: &mut Vec<f64>| -> bool {
            let dx = points[j].x - p.x;
            if best.len() == k && dx * dx > best[k - 1] {
                return false;
            }
            let d2 = (points[j] - p).norm_squared();
            if best.len() < k || d2 < best[k - 1] {
                let at = best.partition_point(|&b| b <= d2);
                best.insert(at, d2);
                best.truncate(k);
            }
            true
        };
        for &j in order[pos + 1..].iter() {
            if !consider(j, &mut best) {
                break;
            }
        }
        for &j in order[..pos].iter().rev() {
            if !consider(j, &mut best) {
                break;
            }
        }
        out[i] = best.iter().map(|d2| d2.sqrt()).sum::<f64>() / k as f64;
    }
    out
}

/// Point nearest (in least squares) to every optical axis.
pub(crate) fn axes_focus(cams: &[&Camera]) -> Option<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for c in cams {
        let d = c.forward();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * c.center();
    }
    let x = a.try_inverse()? * b;
    (a.determinant().abs() > 1e-9).then_some(x)
}

fn in_view(cam: &Camera, p: &Vector3<f64>, z_min: f64, z_max: f64) -> bool {
    let q = cam.to_camera(p);
    if !(q.z >= z_min && q.z <= z_max) {
        return false;
    }
    let u = cam.fx * q.x / q.z + cam.cx;
    let v = cam.fy * q.y / q.z + cam.cy;
    (0.0..cam.width as f64).contains(&u) && (0.0..cam.height as f64).contains(&v)
}

/// Axis-aligned box around the points every camera sees between 0.2x and 2x
/// its distance to the common focus.
pub fn frustum_intersection_box<R: Rng + ?Sized>(
    cams: &[&Camera],
    extent: f64,
    rng: &mut R,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if cams.is_empty() {
        return Err(Error::InvalidParameter("no cameras to bound the scene".into()));
    }
    let focus = axes_focus(cams).unwrap_or_else(|| cams[0].center() + cams[0].forward() * extent.max(1.0));
    let depths: Vec<f64> = cams.iter().map(|c| c.to_camera(&focus).z.max(1e-3)).collect();
    let reach = depths.iter().fold(0.0f64, |a, &b| a.max(b)) * 2.0;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for _ in 0..20_000 {
        let p = focus
            + Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * reach;
        if cams.iter().zip(&depths).all(|(c, &d)| in_view(c, &p, 0.2 * d, 2.0 * d)) {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    if lo.x.is_finite() {
        Ok((lo, hi))
    } else {
        let e = Vector3::repeat(extent);
        Ok((focus - e, focus + e))
    }
}

fn gaussians_from_points(
    positions: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    fallback_scale: f64,
    sh_degree: usize,
) -> Vec<Gaussian3D> {
    let dist = knn_mean_distance(positions, 3);
    positions
        .iter()
        .zip(colors)
        .zip(dist)
        .map(|((p, c), d)| {
            let d = if d.is_nan() {
                fallback_scale
            } else {
                d.max(MIN_DISTANCE)
            };
            let mut sh = vec![Vector3::zeros(); sh_coeff_count(sh_degree)];
            sh[0] = rgb_to_sh_dc(*c);
            Gaussian3D {
                mu: *p,
                log_scale: Vector3::repeat(d.ln()),
                quat: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: logit(INIT_OPACITY),
                sh,
            }
        })
        .collect()
}

/// One isotropic Gaussian per input point (scale from the 3 nearest
/// neighbors, opacity 0.1, flat color), or [`RANDOM_INIT_COUNT`] random
/// Gaussians in the common view volume when there is no point cloud.
pub fn init_cloud<R: Rng + ?Sized>(ds: &SceneDataset, rng: &mut R, sh_degree: usize) -> Result<GaussianCloud> {
    let extent = ds.scene_extent();
    let gaussians = match &ds.point_cloud {
        Some(pc) if !pc.is_empty() => gaussians_from_points(&pc.positions, &pc.colors, 0.01 * extent, sh_degree),
        _ => {
            let cams: Vec<&Camera> = ds.train_frames().iter().map(|f| &f.camera).collect();
            if cams.is_empty() {
                return Err(Error::InvalidParameter(
                    "no point cloud and no training cameras to initialize from".into(),
                ));
            }
            let (lo, hi) = frustum_intersection_box(&cams, extent, rng)?;
            let mut pos = Vec::with_capacity(RANDOM_INIT_COUNT);
            let mut col = Vec::with_capacity(RANDOM_INIT_COUNT);
            for _ in 0..RANDOM_INIT_COUNT {
                pos.push(Vector3::from_fn(|k, _| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>()));
                col.push(Vector3::from_fn(|_, _| rng.random::<f64>()));
            }
            gaussians_from_points(&pos, &col, 0.01 * extent, sh_degree)
        }
    };
    GaussianCloud::with_gaussians(gaussians, sh_degree, ds.background)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_at_unit_distance() {
        let pts = [Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0)];
        let d = knn_mean_distance(&pts, 3);
        assert_eq!(d, vec![1.0, 1.0]);
        assert!(knn_mean_distance(&pts[..1], 3)[0].is_nan());
        assert!(knn_mean_distance(&[], 3).is_empty());
    }

    #[test]
    fn sweep_respects_ties_in_x() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, -2.0, 0.0),
            Vector3::new(5.0, 0.0, 0.0),
        ];
        let d = knn_mean_distance(&pts, 3);
        assert!((d[0] - 2.0).abs() < 1e-15);
    }
}
