//! Adaptive density control: gradient-triggered clone/split and opacity pruning.
//!
//! Both operations report how surviving rows map to the previous ones so the
//! caller can carry per-Gaussian state (optimizer moments, statistics) along.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GradBundle;
use crate::scene::{normalize_quat, quat_to_rotation, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyParams {
    /// Mean screen-space positional gradient that triggers clone/split.
    pub grad_threshold: f64,
    /// Gaussians with opacity below this are pruned.
    pub opacity_threshold: f64,
    /// Clone when the largest scale is at most this fraction of the scene extent, split otherwise.
    pub scale_split_fraction: f64,
    pub split_count: usize,
    pub split_scale_divisor: f64,
}

impl DensifyParams {
    /// Permissive thresholds of the high-densification phase (and warm-up).
    pub const fn high() -> Self {
        Self {
            grad_threshold: 0.0002,
            opacity_threshold: 0.005,
            scale_split_fraction: 0.01,
            split_count: 2,
            split_scale_divisor: 1.6,
        }
    }

    /// Strict thresholds of the low-densification phase.
    pub const fn low() -> Self {
        Self {
            grad_threshold: 0.0005,
            opacity_threshold: 0.1,
            ..Self::high()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grad_threshold must be nonnegative, got {}",
                self.grad_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity_threshold) {
            return Err(Error::InvalidParameter(format!(
                "opacity_threshold must lie in [0, 1], got {}",
                self.opacity_threshold
            )));
        }
        if self.split_count < 2 {
            return Err(Error::InvalidParameter("split_count must be at least 2".into()));
        }
        if !(self.split_scale_divisor > 1.0) {
            return Err(Error::InvalidParameter("split_scale_divisor must exceed 1".into()));
        }
        if !(self.scale_split_fraction >= 0.0) {
            return Err(Error::InvalidParameter(
                "scale_split_fraction must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self::high()
    }
}

/// Running sum of per-view positional gradient norms and hit counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensityStats {
    pub grad_sum: Vec<f64>,
    pub hits: Vec<u32>,
}

impl DensityStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            hits: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_sum.is_empty()
    }

    /// Adds one view's statistics; only Gaussians visible in that view count a hit.
    pub fn accumulate(&mut self, bundle: &GradBundle) -> Result<()> {
        if bundle.len() != self.len() {
            return Err(Error::Shape(format!(
                "statistics track {} gaussians, bundle has {}",
                self.len(),
                bundle.len()
            )));
        }
        for i in 0..self.len() {
            if bundle.visible[i] {
                self.grad_sum[i] += bundle.mean2d_grad_norm[i];
                self.hits[i] += 1;
            }
        }
        Ok(())
    }

    /// `sum / max(hits, 1)`.
    pub fn criterion(&self, i: usize) -> f64 {
        self.grad_sum[i] / self.hits[i].max(1) as f64
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }

    pub fn remap(&mut self, rows: &[RowSource]) {
        let old = std::mem::take(self);
        self.grad_sum = rows
            .iter()
            .map(|r| match r {
                RowSource::Existing(i) => old.grad_sum[*i],
                RowSource::New => 0.0,
            })
            .collect();
        self.hits = rows
            .iter()
            .map(|r| match r {
                RowSource::Existing(i) => old.hits[*i],
                RowSource::New => 0,
            })
            .collect();
    }
}

/// Where a row of the updated cloud came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSource {
    Existing(usize),
    /// Freshly created; per-row state starts at zero.
    New,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BirthKind {
    Clone,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Birth {
    pub parent: usize,
    pub kind: BirthKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyOutcome {
    pub rows: Vec<RowSource>,
    pub births: Vec<Birth>,
    pub clones: usize,
    /// Number of parents that were split.
    pub splits: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneOutcome {
    pub rows: Vec<RowSource>,
    pub removed: Vec<usize>,
}

/// Removes every Gaussian with opacity below `epsilon`, preserving order.
pub fn prune(cloud: &mut GaussianCloud, epsilon: f64) -> Result<PruneOutcome> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!(
            "opacity threshold must lie in [0, 1], got {epsilon}"
        )));
    }
    let mut out = PruneOutcome::default();
    let old = std::mem::take(&mut cloud.gaussians);
    for (i, g) in old.into_iter().enumerate() {
        if g.opacity() < epsilon {
            out.removed.push(i);
        } else {
            out.rows.push(RowSource::Existing(i));
            cloud.gaussians.push(g);
        }
    }
    Ok(out)
}

/// Clones small and splits large Gaussians whose mean positional gradient
/// reaches `params.grad_threshold`. Originals keep their order (split parents
/// are dropped); new Gaussians are appended in parent order. `stats` is reset
/// to zeros sized to the new cloud.
pub fn densify<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    stats: &mut DensityStats,
    params: &DensifyParams,
    scene_extent: f64,
    rng: &mut R,
) -> Result<DensifyOutcome> {
    params.validate()?;
    if stats.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "statistics track {} gaussians, cloud has {}",
            stats.len(),
            cloud.len()
        )));
    }
    if !(scene_extent > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scene extent must be positive, got {scene_extent}"
        )));
    }
    let clone_limit = params.scale_split_fraction * scene_extent;
    let shrink = params.split_scale_divisor.ln();

    let mut out = DensifyOutcome::default();
    let mut kept = Vec::with_capacity(cloud.len());
    let mut born = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if !(stats.criterion(i) >= params.grad_threshold) {
            kept.push(i);
            continue;
        }
        if g.scale().max() <= clone_limit {
            kept.push(i);
            born.push(g.clone());
            out.births.push(Birth {
                parent: i,
                kind: BirthKind::Clone,
            });
            out.clones += 1;
        } else {
            let rot = quat_to_rotation(normalize_quat(g.quat)?);
            let s = g.scale();
            for _ in 0..params.split_count {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let mut child = g.clone();
                child.mu = g.mu + rot * s.component_mul(&z);
                child.log_scale = g.log_scale.add_scalar(-shrink);
                born.push(child);
                out.births.push(Birth {
                    parent: i,
                    kind: BirthKind::Split,
                });
            }
            out.splits += 1;
        }
    }

    let old = std::mem::take(&mut cloud.gaussians);
    let mut old: Vec<Option<_>> = old.into_iter().map(Some).collect();
    for &i in &kept {
        cloud.gaussians.push(old[i].take().expect("row kept once"));
        out.rows.push(RowSource::Existing(i));
    }
    for g in born {
        cloud.gaussians.push(g);
        out.rows.push(RowSource::New);
    }
    stats.reset(cloud.len());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud_with_opacities(ops: &[f64]) -> GaussianCloud {
        let gs = ops
            .iter()
            .enumerate()
            .map(|(i, &o)| Gaussian3D::isotropic(Vector3::new(i as f64, 0.0, 3.0), 0.1, o, Vector3::repeat(0.5), 0))
            .collect();
        GaussianCloud::with_gaussians(gs, 0, Vector3::zeros()).unwrap()
    }

    fn opacities(c: &GaussianCloud) -> Vec<f64> {
        c.gaussians.iter().map(|g| g.opacity()).collect()
    }

    #[test]
    fn prune_keeps_opaque() {
        let mut c = cloud_with_opacities(&[0.5, 0.5, 0.5]);
        let out = prune(&mut c, 0.1).unwrap();
        assert_eq!(c.len(), 3);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn prune_low_and_high_thresholds() {
        let mut low = cloud_with_opacities(&[0.004, 0.05, 0.5]);
        let out = prune(&mut low, DensifyParams::low().opacity_threshold).unwrap();
        assert_eq!(out.removed, vec![0, 1]);
        assert_eq!(low.len(), 1);
        assert!((opacities(&low)[0] - 0.5).abs() < 1e-12);

        let mut high = cloud_with_opacities(&[0.004, 0.05, 0.5]);
        let out = prune(&mut high, DensifyParams::high().opacity_threshold).unwrap();
        assert_eq!(out.removed, vec![0]);
        assert_eq!(out.rows, vec![RowSource::Existing(1), RowSource::Existing(2)]);
    }

    #[test]
    fn prune_zero_threshold_is_identity() {
        let mut c = cloud_with_opacities(&[0.001, 0.2]);
        let before = c.clone();
        prune(&mut c, 0.0).unwrap();
        assert_eq!(c, before);
    }

    fn bundle_with_norm(n: usize, norm: f64) -> GradBundle {
        let mut b = GradBundle::zeros(n, 1);
        b.mean2d_grad_norm.iter_mut().for_each(|v| *v = norm);
        b.visible.iter_mut().for_each(|v| *v = true);
        b
    }

    #[test]
    fn accumulate_threshold_semantics() {
        let mut s = DensityStats::new(1);
        s.accumulate(&bundle_with_norm(1, 0.0)).unwrap();
        assert_eq!(s.grad_sum[0], 0.0);
        s.reset(1);
        s.accumulate(&bundle_with_norm(1, 0.0003)).unwrap();
        s.accumulate(&bundle_with_norm(1, 0.0003)).unwrap();
        let mean = s.criterion(0);
        assert!((mean - 0.0003).abs() < 1e-15);
        assert!(mean >= DensifyParams::high().grad_threshold);
        assert!(!(mean >= DensifyParams::low().grad_threshold));
    }

    #[test]
    fn unseen_gaussian_never_triggers() {
        let s = DensityStats::new(3);
        for i in 0..3 {
            assert_eq!(s.criterion(i), 0.0);
        }
        let mut c = cloud_with_opacities(&[0.5, 0.5, 0.5]);
        let mut s = s;
        let p = DensifyParams {
            grad_threshold: 1e-12,
            ..DensifyParams::high()
        };
        let out = densify(&mut c, &mut s, &p, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.len(), 3);
        assert!(out.births.is_empty());
    }

    #[test]
    fn accumulate_length_mismatch() {
        let mut s = DensityStats::new(2);
        assert!(matches!(s.accumulate(&bundle_with_norm(3, 1.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn densify_below_threshold_unchanged() {
        let mut c = cloud_with_opacities(&[0.5, 0.5]);
        let before = c.clone();
        let mut s = DensityStats::new(2);
        s.accumulate(&bundle_with_norm(2, 1e-5)).unwrap();
        densify(
            &mut c,
            &mut s,
            &DensifyParams::high(),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(c, before);
    }

    #[test]
    fn densify_infinite_threshold_is_identity() {
        let mut c = cloud_with_opacities(&[0.5, 0.5]);
        let before = c.clone();
        let mut s = DensityStats::new(2);
        s.accumulate(&bundle_with_norm(2, 1e9)).unwrap();
        let p = DensifyParams {
            grad_threshold: f64::INFINITY,
            ..DensifyParams::high()
        };
        densify(&mut c, &mut s, &p, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(c, before);
    }

    #[test]
    fn small_gaussian_is_cloned() {
        let mut c = cloud_with_opacities(&[0.5, 0.5]);
        c.gaussians[1].log_scale = Vector3::repeat(0.001f64.ln());
        let mut s = DensityStats::new(2);
        let mut b = bundle_with_norm(2, 0.0);
        b.mean2d_grad_norm[1] = 0.001;
        s.accumulate(&b).unwrap();
        let out = densify(
            &mut c,
            &mut s,
            &DensifyParams::high(),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(out.clones, 1);
        assert_eq!(c.gaussians[2], c.gaussians[1]);
        assert_eq!(
            out.rows,
            vec![RowSource::Existing(0), RowSource::Existing(1), RowSource::New]
        );
        assert!(s.grad_sum.iter().all(|&v| v == 0.0) && s.len() == 3);
    }

    #[test]
    fn large_gaussian_is_split() {
        let mut c = cloud_with_opacities(&[0.5, 0.5]);
        c.gaussians[0].log_scale = Vector3::new(-1.0, -2.0, -1.5);
        c.gaussians[0].quat = [0.8, 0.2, -0.1, 0.3];
        let mut s = DensityStats::new(2);
        let mut b = bundle_with_norm(2, 0.0);
        b.mean2d_grad_norm[0] = 0.001;
        s.accumulate(&b).unwrap();
        let parent = c.gaussians[0].clone();
        let out = densify(
            &mut c,
            &mut s,
            &DensifyParams::high(),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(out.splits, 1);
        assert_eq!(out.rows, vec![RowSource::Existing(1), RowSource::New, RowSource::New]);
        for child in &c.gaussians[1..] {
            let ratio = parent.scale().component_div(&child.scale());
            for r in ratio.iter() {
                assert!((r - 1.6).abs() < 1e-12);
            }
            assert!(child.is_finite());
            assert_eq!(child.opacity_logit, parent.opacity_logit);
            assert_eq!(child.sh, parent.sh);
        }
    }

    #[test]
    fn split_children_center_on_parent() {
        // Many independent one-parent splits; the sample mean of every child
        // position must land within 3 standard errors of the parent mean.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut parent = Gaussian3D::isotropic(Vector3::new(0.3, -0.2, 2.0), 0.1, 0.5, Vector3::repeat(0.5), 0);
        parent.log_scale = Vector3::new(-1.0, -2.0, -0.5);
        parent.quat = [0.9, -0.3, 0.2, 0.1];
        let draws = 10_000;
        let mut sum = Vector3::zeros();
        let mut count = 0;
        while count < draws {
            let mut c = GaussianCloud::with_gaussians(vec![parent.clone()], 0, Vector3::zeros()).unwrap();
            let mut s = DensityStats::new(1);
            s.accumulate(&bundle_with_norm(1, 1.0)).unwrap();
            densify(&mut c, &mut s, &DensifyParams::high(), 1.0, &mut rng).unwrap();
            for g in &c.gaussians {
                sum += g.mu;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let cov = crate::scene::build_covariance(&parent.log_scale, parent.quat).unwrap();
        for k in 0..3 {
            let sigma = cov[(k, k)].sqrt();
            assert!(
                (mean[k] - parent.mu[k]).abs() <= 3.0 * sigma / (count as f64).sqrt(),
                "axis {k}"
            );
        }
    }

    #[test]
    fn densify_shape_mismatch() {
        let mut c = cloud_with_opacities(&[0.5]);
        let mut s = DensityStats::new(2);
        assert!(matches!(
            densify(
                &mut c,
                &mut s,
                &DensifyParams::high(),
                1.0,
                &mut ChaCha8Rng::seed_from_u64(0)
            ),
            Err(Error::Shape(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prune_is_idempotent(ops in prop::collection::vec(0.001f64..0.999, 0..40), eps in 0.0f64..1.0) {
                let mut once = cloud_with_opacities(&ops);
                prune(&mut once, eps).unwrap();
                let mut twice = once.clone();
                let out = prune(&mut twice, eps).unwrap();
                prop_assert_eq!(&once, &twice);
                prop_assert!(out.removed.is_empty());
            }

            #[test]
            fn densify_children_are_valid(
                seed in 0u64..1000,
                log_scales in prop::collection::vec(prop::array::uniform3(-6.0f64..0.0), 1..12),
                norms in prop::collection::vec(0.0f64..0.001, 12),
            ) {
                let n = log_scales.len();
                let gs = log_scales.iter().map(|ls| {
                    let mut g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.5, Vector3::repeat(0.5), 0);
                    g.log_scale = Vector3::from(*ls);
                    g
                }).collect();
                let mut c = GaussianCloud::with_gaussians(gs, 0, Vector3::zeros()).unwrap();
                let mut s = DensityStats::new(n);
                let mut b = bundle_with_norm(n, 0.0);
                b.mean2d_grad_norm.copy_from_slice(&norms[..n]);
                s.accumulate(&b).unwrap();
                let out = densify(&mut c, &mut s, &DensifyParams::high(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert_eq!(c.len(), n + out.clones + out.splits);
                prop_assert_eq!(out.rows.len(), c.len());
                for g in &c.gaussians {
                    prop_assert!(g.is_finite());
                    prop_assert!(g.scale().min() > 0.0);
                }
            }
        }
    }
}
