use std::path::{Path, PathBuf};
use std::time::Instant;

use adsplat::io::checkpoint::load_checkpoint;
use adsplat::io::pfm::write_pfm;
use adsplat::io::synth::{synth_scene, SynthPreset};
use adsplat::io::write_png;
use adsplat::metrics::{trajectory_metrics, EvalView};
use adsplat::trajectory::spiral_trajectory;
use adsplat::{evaluate, load_scene, render, save_scene, Ablation, Camera, RunConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "adsplat",
    version,
    about = "Gaussian splatting with alternating densification on the CPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model pair on a scene directory.
    Train(TrainArgs),
    /// Render a checkpoint from a scene camera or along a spiral.
    Render(RenderArgs),
    /// Score a checkpoint on the held-out frames of a scene.
    Eval(EvalArgs),
    /// Write a synthetic scene directory.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Print a progress line every this many iterations (0 for none).
    #[arg(long, default_value_t = 500)]
    log_every: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Trajectory {
    Spiral,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene directory supplying the cameras.
    #[arg(long)]
    scene: PathBuf,
    /// Index of the camera in manifest order.
    #[arg(long, conflicts_with = "trajectory", required_unless_present = "trajectory")]
    camera: Option<usize>,
    #[arg(long, value_enum)]
    trajectory: Option<Trajectory>,
    /// Frames along the trajectory.
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Spiral frames compared against the scene's reference model, if it has one.
    #[arg(long, default_value_t = 30)]
    trajectory_frames: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = parse_preset)]
    preset: SynthPreset,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: adsplat::Error| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<SynthPreset, String> {
    s.parse().map_err(|e: adsplat::Error| e.to_string())
}

fn train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_ablation(a.ablation);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = load_scene(&a.scene)?;
    let start = Instant::now();
    let out = adsplat::train(&ds, &cfg, &a.out, &mut |r| {
        if a.log_every > 0 && r.iteration % a.log_every == 0 {
            let [l1, l2] = &r.losses;
            eprintln!(
                "iter {:6} {:6} loss {:.5} / {:.5} gaussians {} / {} {:.1}s",
                r.iteration,
                r.phase,
                l1.total,
                l2.total,
                l1.gaussian_count,
                l2.gaussian_count,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    if out.skipped > 0 {
        eprintln!("skipped {} non-finite gaussian updates", out.skipped);
    }
    println!(
        "trained {} iterations in {:.1}s; final counts {:?}; outputs in {}",
        cfg.schedule.total_iters,
        start.elapsed().as_secs_f64(),
        out.final_counts,
        out.dir.display()
    );
    Ok(())
}

fn render_one(cloud: &adsplat::GaussianCloud, cam: &Camera, out: &Path, stem: &str) -> Result<()> {
    let r = render(cloud, cam)?;
    write_png(&out.join(format!("{stem}.png")), &r.color)?;
    write_pfm(&out.join(format!("{stem}_depth.pfm")), &r.surface_depth())?;
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cloud = load_checkpoint(&a.checkpoint)?.cloud;
    let ds = load_scene(&a.scene)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(i) = a.camera {
        let Some(f) = ds.frames.get(i) else {
            bail!(
                "camera index {i} out of range: the scene has {} frames",
                ds.frames.len()
            );
        };
        render_one(&cloud, &f.camera, &a.out, &format!("camera_{i:03}"))?;
        println!("rendered camera {i} ({}) into {}", f.name, a.out.display());
        return Ok(());
    }
    let cams: Vec<Camera> = ds.train_frames().iter().map(|f| f.camera.clone()).collect();
    let path = spiral_trajectory(&cams, a.frames)?;
    path.par_iter()
        .enumerate()
        .try_for_each(|(k, cam)| render_one(&cloud, cam, &a.out, &format!("spiral_{k:04}")))?;
    println!("rendered {} spiral frames into {}", path.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cloud = load_checkpoint(&a.checkpoint)?.cloud;
    let ds = load_scene(&a.scene)?;
    let mut report = evaluate(&cloud, &EvalView::test_set(&ds))?;
    if let (Some(reference), true) = (&ds.reference_model, a.trajectory_frames > 0) {
        let cams: Vec<Camera> = ds.train_frames().iter().map(|f| f.camera.clone()).collect();
        let path = spiral_trajectory(&cams, a.trajectory_frames)?;
        report.trajectory = Some(trajectory_metrics(&cloud, reference, &path)?);
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    report.write_csv(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let s = synth_scene(a.preset, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    save_scene(&s.dataset, &a.out)?;
    println!(
        "wrote {} ({} frames, {} ground-truth gaussians) to {}",
        a.preset.name(),
        s.dataset.frames.len(),
        s.ground_truth.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}
