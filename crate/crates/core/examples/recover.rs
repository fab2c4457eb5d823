//! Trains on the layered-boxes preset and reports held-out metrics.
//!
//! `cargo run --release -p adsplat --example recover -- [iters] [seed] [ablation]`

use std::time::Instant;

use adsplat::io::synth::{synth_scene, SynthPreset};
use adsplat::metrics::{evaluate, EvalView};
use adsplat::{Ablation, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adsplat::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).map(|s| s.parse().expect("iters")).unwrap_or(5000);
    let seed: u64 = args.get(2).map(|s| s.parse().expect("seed")).unwrap_or(0);
    let ablation: Option<Ablation> = args.get(3).map(|s| s.parse().expect("ablation"));

    let scene = synth_scene(SynthPreset::LayeredBoxes, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut cfg = RunConfig::default().with_ablation(ablation);
    cfg.seed = seed;
    cfg.schedule.total_iters = iters;
    if let Ok(w) = std::env::var("RECOVER_WARMUP") {
        cfg.schedule.warmup_iters = w.parse().expect("warmup");
    }
    cfg.train_views = Some(12);
    cfg.checkpoint_interval = 0;
    let dir = std::env::temp_dir().join(format!("adsplat-recover-{seed}"));
    let start = Instant::now();
    let out = adsplat::train(&scene.dataset, &cfg, &dir, &mut |r| {
        if r.iteration % 500 == 0 {
            let l = &r.losses[0];
            eprintln!(
                "it {:5} {:6} l_ph {:.5} total {:.5} n {} {:.1}s",
                r.iteration,
                r.phase,
                l.photometric,
                l.total,
                l.gaussian_count,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let views: Vec<EvalView> = scene
        .dataset
        .test_frames()
        .into_iter()
        .map(|f| EvalView {
            name: f.name.clone(),
            camera: f.camera.clone(),
            image: Some(f.image.clone()),
            depth: f.depth.clone(),
        })
        .collect();
    if std::env::var("RECOVER_GT").is_ok() {
        print!("ground truth:\n{}", evaluate(&scene.ground_truth, &views)?.summary());
    }
    let report = evaluate(&out.model, &views)?;
    print!("{}", report.summary());
    println!(
        "train time {:.1}s, counts {:?}",
        start.elapsed().as_secs_f64(),
        out.final_counts
    );
    Ok(())
}
