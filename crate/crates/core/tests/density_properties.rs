//! Clone/split/prune behavior of adaptive density control.

use adsplat::density::{densify, prune, BirthKind, DensifyParams, DensityStats, RowSource};
use adsplat::raster::GradBundle;
use adsplat::scene::logit;
use adsplat::{Gaussian3D, GaussianCloud};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cloud(opacities: &[f64], scale: f64) -> GaussianCloud {
    let gs = opacities
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            Gaussian3D::isotropic(
                Vector3::new(i as f64 * 0.3, 0.0, 2.0),
                scale,
                o,
                Vector3::repeat(0.4),
                0,
            )
        })
        .collect();
    GaussianCloud::with_gaussians(gs, 0, Vector3::zeros()).unwrap()
}

fn bundle(norms: &[f64]) -> GradBundle {
    let mut b = GradBundle::zeros(norms.len(), 1);
    b.mean2d_grad_norm = norms.to_vec();
    b.visible = vec![true; norms.len()];
    b
}

#[test]
fn low_and_high_opacity_thresholds_prune_different_sets() {
    for (eps, survivors) in [
        (DensifyParams::low().opacity_threshold, 1),
        (DensifyParams::high().opacity_threshold, 2),
    ] {
        let mut c = cloud(&[0.004, 0.05, 0.5], 0.1);
        prune(&mut c, eps).unwrap();
        assert_eq!(c.len(), survivors, "threshold {eps}");
    }
}

#[test]
fn mean_gradient_between_thresholds_densifies_only_when_permissive() {
    for (params, grows) in [(DensifyParams::high(), true), (DensifyParams::low(), false)] {
        let mut c = cloud(&[0.5], 0.01);
        let mut stats = DensityStats::new(1);
        stats.accumulate(&bundle(&[0.0003])).unwrap();
        stats.accumulate(&bundle(&[0.0003])).unwrap();
        assert_eq!(stats.hits, vec![2]);
        let out = densify(&mut c, &mut stats, &params, 10.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.len() == 2, grows, "{params:?}");
        assert_eq!(out.clones, usize::from(grows));
    }
}

#[test]
fn invisible_views_do_not_dilute_the_mean() {
    let mut stats = DensityStats::new(1);
    stats.accumulate(&bundle(&[0.0003])).unwrap();
    let mut hidden = bundle(&[0.0]);
    hidden.visible[0] = false;
    stats.accumulate(&hidden).unwrap();
    assert_eq!(stats.criterion(0), 0.0003);
}

fn arb_gaussian() -> impl Strategy<Value = Gaussian3D> {
    (
        prop::array::uniform3(-2.0f64..2.0),
        prop::array::uniform3(-6.0f64..1.0),
        prop::array::uniform4(-1.0f64..1.0),
        0.001f64..0.999,
    )
        .prop_filter("nonzero quaternion", |(_, _, q, _)| {
            q.iter().map(|v| v * v).sum::<f64>() > 1e-3
        })
        .prop_map(|(mu, ls, q, o)| Gaussian3D {
            mu: Vector3::from(mu),
            log_scale: Vector3::from(ls),
            quat: q,
            opacity_logit: logit(o),
            sh: vec![Vector3::new(0.1, -0.2, 0.3)],
        })
}

proptest! {
    #[test]
    fn densify_then_prune_keeps_every_gaussian_valid(
        gs in prop::collection::vec(arb_gaussian(), 1..30),
        norms in prop::collection::vec(0.0f64..0.001, 30),
        low in any::<bool>(),
        extent in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        let n = gs.len();
        let mut c = GaussianCloud::with_gaussians(gs, 0, Vector3::zeros()).unwrap();
        let original = c.clone();
        let params = if low { DensifyParams::low() } else { DensifyParams::high() };
        let mut stats = DensityStats::new(n);
        stats.accumulate(&bundle(&norms[..n])).unwrap();
        let out = densify(&mut c, &mut stats, &params, extent, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();

        let triggered: Vec<usize> = (0..n).filter(|&i| norms[i] >= params.grad_threshold).collect();
        prop_assert_eq!(out.clones + out.splits, triggered.len());
        prop_assert_eq!(c.len(), n + out.clones + out.splits * (params.split_count - 1));
        prop_assert_eq!(out.rows.len(), c.len());
        prop_assert_eq!(stats.len(), c.len());
        c.validate().unwrap();
        for (row, g) in out.rows.iter().zip(&c.gaussians) {
            prop_assert!(g.mu.iter().chain(g.log_scale.iter()).all(|v| v.is_finite()));
            if let RowSource::Existing(i) = row {
                prop_assert_eq!(g, &original.gaussians[*i]);
            }
        }
        let born = &c.gaussians[c.len() - out.births.len()..];
        for (b, g) in out.births.iter().zip(born) {
            let parent = &original.gaussians[b.parent];
            prop_assert_eq!(g.opacity_logit, parent.opacity_logit);
            match b.kind {
                BirthKind::Clone => prop_assert_eq!(g, parent),
                BirthKind::Split => {
                    let shrunk = parent.scale() / params.split_scale_divisor;
                    prop_assert!((g.scale() - shrunk).abs().max() <= 1e-12 * parent.scale().max());
                }
            }
        }

        let before = c.len();
        let p = prune(&mut c, params.opacity_threshold).unwrap();
        prop_assert!(c.len() <= before);
        prop_assert_eq!(c.len() + p.removed.len(), before);
        prop_assert!(c.gaussians.iter().all(|g| g.opacity() >= params.opacity_threshold));
    }
}
