//! Dual-model training: warm-up, then alternating low/high densification
//! blocks with phase-specific objectives.

pub mod optim;
pub mod pseudo;
pub mod schedule;

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DensifyMode, LossMode, RunConfig};
use crate::density::{densify, prune, DensifyParams, DensityStats};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::checkpoint::save_checkpoint;
use crate::io::{init_cloud, SceneDataset};
use crate::loss::{combined_loss, photometric_loss};
use crate::raster::{rasterize, GradBundle, Rasterized};
use crate::scene::{Camera, GaussianCloud};

pub use optim::{OptimizerConfig, OptimizerState, StepSizes, UpdateReport};
pub use pseudo::{sample_pseudo_view, PseudoViewConfig};
pub use schedule::{phase_for_iteration, Block, Phase, PhaseSchedule};

#[derive(Debug, Clone)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
}

/// One of the two concurrently trained models with its own optimizer state.
#[derive(Debug, Clone)]
pub struct Model {
    pub cloud: GaussianCloud,
    pub optimizer: OptimizerState,
    pub stats: DensityStats,
}

impl Model {
    pub fn new(cloud: GaussianCloud) -> Self {
        Self {
            optimizer: OptimizerState::new(cloud.len(), cloud.sh_degree),
            stats: DensityStats::new(cloud.len()),
            cloud,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModelLoss {
    pub photometric: f64,
    pub smoothness: f64,
    pub pseudo: f64,
    pub total: f64,
    pub gaussian_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensifyRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub model: usize,
    pub before: usize,
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub phase: Phase,
    pub combined: bool,
    pub losses: [ModelLoss; 2],
    pub densify: Vec<DensifyRecord>,
    /// Gaussians left untouched this step because of non-finite gradients.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub models: [Model; 2],
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    pub config: RunConfig,
    pub views: Vec<TrainView>,
    pub scene_extent: f64,
}

impl TrainState {
    /// Both models start from copies of `init`.
    pub fn new(
        init: GaussianCloud,
        views: Vec<TrainView>,
        scene_extent: f64,
        config: RunConfig,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::InvalidParameter("no training views".into()));
        }
        for (i, v) in views.iter().enumerate() {
            let c = &v.camera;
            if v.image.width() != c.width || v.image.height() != c.height || v.image.channels() != 3 {
                return Err(Error::Shape(format!(
                    "training view {i}: image does not match its camera"
                )));
            }
        }
        if !(scene_extent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scene extent must be positive, got {scene_extent}"
            )));
        }
        init.validate()?;
        Ok(Self {
            models: [Model::new(init.clone()), Model::new(init)],
            iteration: 0,
            rng,
            config,
            views,
            scene_extent,
        })
    }

    pub fn uses_combined_loss(&self, phase: Phase) -> bool {
        match self.config.loss_mode {
            LossMode::Alternating => phase == Phase::Low,
            LossMode::Photometric => false,
            LossMode::Combined => phase != Phase::Warmup,
        }
    }

    pub fn densify_params(&self, phase: Phase) -> DensifyParams {
        match (phase, self.config.densify_mode) {
            (Phase::Low, DensifyMode::Alternating) => self.config.densify_low,
            _ => self.config.densify_high,
        }
    }

    /// Thresholds to densify with at iteration `t`, if a densify step is due.
    pub fn densify_due(&self, t: usize) -> Result<Option<DensifyParams>> {
        let sched = &self.config.schedule;
        let phase = sched.phase_for_iteration(t)?;
        if phase == Phase::Warmup {
            let due = self.config.warmup_densify && t > 0 && t % self.config.warmup_densify_interval == 0;
            return Ok(due.then_some(self.config.densify_high));
        }
        Ok(sched.is_block_start(t)?.then(|| self.densify_params(phase)))
    }
}

fn densify_and_prune(
    model: &mut Model,
    params: &DensifyParams,
    extent: f64,
    rng: &mut ChaCha8Rng,
    iteration: usize,
    phase: Phase,
    index: usize,
) -> Result<DensifyRecord> {
    let before = model.cloud.len();
    let d = densify(&mut model.cloud, &mut model.stats, params, extent, rng)?;
    model.optimizer.remap(&d.rows);
    let p = prune(&mut model.cloud, params.opacity_threshold)?;
    model.optimizer.remap(&p.rows);
    model.stats.reset(model.cloud.len());
    Ok(DensifyRecord {
        iteration,
        phase,
        model: index + 1,
        before,
        clones: d.clones,
        splits: d.splits,
        pruned: p.removed.len(),
        total: model.cloud.len(),
    })
}

struct Renders {
    train: Rasterized,
    pseudo: Option<Rasterized>,
}

fn render_model(cloud: &GaussianCloud, train_cam: &Camera, pseudo_cam: Option<&Camera>) -> Result<Renders> {
    Ok(Renders {
        train: rasterize(cloud, train_cam)?,
        pseudo: pseudo_cam.map(|c| rasterize(cloud, c)).transpose()?,
    })
}

struct Objective {
    loss: ModelLoss,
    grads: GradBundle,
}

fn model_gradients(
    cloud: &GaussianCloud,
    own: &Renders,
    other_pseudo: Option<&Image>,
    view: &TrainView,
    pseudo_cam: Option<&Camera>,
    cfg: &RunConfig,
) -> Result<Objective> {
    let w = &cfg.loss;
    match (pseudo_cam, &own.pseudo, other_pseudo) {
        (Some(pcam), Some(pu), Some(u_other)) => {
            let (v, u) = (&own.train.output, &pu.output);
            let l = combined_loss(&v.color, &view.image, &v.depth, &u.color, &u.depth, u_other, w)?;
            let mut grads = own.train.backward(cloud, &view.camera, &l.grad_v, Some(&l.grad_d))?;
            let pseudo = pu.backward(cloud, pcam, &l.grad_u, Some(&l.grad_d_pseudo))?;
            grads.add_grads(&pseudo)?;
            Ok(Objective {
                loss: ModelLoss {
                    photometric: l.photometric,
                    smoothness: l.smoothness,
                    pseudo: l.pseudo,
                    total: l.value,
                    gaussian_count: cloud.len(),
                },
                grads,
            })
        }
        _ => {
            let ph = photometric_loss(&own.train.output.color, &view.image, w.lambda_ssim)?;
            let grads = own.train.backward(cloud, &view.camera, &ph.grad, None)?;
            Ok(Objective {
                loss: ModelLoss {
                    photometric: ph.value,
                    smoothness: 0.0,
                    pseudo: 0.0,
                    total: ph.value,
                    gaussian_count: cloud.len(),
                },
                grads,
            })
        }
    }
}

fn apply(model: &mut Model, obj: &Objective, lr: &StepSizes, cfg: &OptimizerConfig) -> Result<UpdateReport> {
    model.stats.accumulate(&obj.grads)?;
    model.optimizer.update(&mut model.cloud, &obj.grads, lr, cfg)
}

/// Runs one iteration on both models.
pub fn train_step(state: &mut TrainState) -> Result<StepReport> {
    let t = state.iteration;
    let phase = state.config.schedule.phase_for_iteration(t)?;
    let mut records = Vec::new();
    if let Some(params) = state.densify_due(t)? {
        for (k, model) in state.models.iter_mut().enumerate() {
            records.push(densify_and_prune(
                model,
                &params,
                state.scene_extent,
                &mut state.rng,
                t,
                phase,
                k,
            )?);
        }
    }

    let view = &state.views[t % state.views.len()];
    let combined = state.uses_combined_loss(phase);
    let pseudo_cam = if combined {
        let cams: Vec<Camera> = state.views.iter().map(|v| v.camera.clone()).collect();
        let p = &state.config.pseudo_view;
        Some(sample_pseudo_view(
            &cams,
            &mut state.rng,
            p.max_angle_deg,
            p.max_trans_frac,
            state.scene_extent,
        )?)
    } else {
        None
    };
    let pseudo_ref = pseudo_cam.as_ref();

    let [m1, m2] = &mut state.models;
    let (r1, r2) = rayon::join(
        || render_model(&m1.cloud, &view.camera, pseudo_ref),
        || render_model(&m2.cloud, &view.camera, pseudo_ref),
    );
    let (r1, r2) = (r1?, r2?);
    let u1 = r1.pseudo.as_ref().map(|r| &r.output.color);
    let u2 = r2.pseudo.as_ref().map(|r| &r.output.color);

    let cfg = &state.config;
    let lr = cfg
        .optimizer
        .step_sizes(t, cfg.schedule.total_iters, state.scene_extent);
    let (o1, o2) = rayon::join(
        || -> Result<(ModelLoss, UpdateReport)> {
            let obj = model_gradients(&m1.cloud, &r1, u2, view, pseudo_ref, cfg)?;
            let rep = apply(m1, &obj, &lr, &cfg.optimizer)?;
            Ok((obj.loss, rep))
        },
        || -> Result<(ModelLoss, UpdateReport)> {
            let obj = model_gradients(&m2.cloud, &r2, u1, view, pseudo_ref, cfg)?;
            let rep = apply(m2, &obj, &lr, &cfg.optimizer)?;
            Ok((obj.loss, rep))
        },
    );
    let ((l1, u1r), (l2, u2r)) = (o1?, o2?);
    state.iteration += 1;
    Ok(StepReport {
        iteration: t,
        phase,
        combined,
        losses: [l1, l2],
        densify: records,
        skipped: u1r.skipped + u2r.skipped,
    })
}

pub const TRAIN_LOG: &str = "train_log.csv";
pub const DENSIFY_LOG: &str = "densify_log.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const SECOND_MODEL_FILE: &str = "model_g2.bin";
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub dir: PathBuf,
    /// Evaluation model (the first of the pair).
    pub model: GaussianCloud,
    pub final_counts: [usize; 2],
    pub skipped: usize,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

struct Logs {
    train: csv::Writer<File>,
    densify: csv::Writer<File>,
}

impl Logs {
    fn create(dir: &Path) -> Result<Self> {
        let mut train = csv::Writer::from_path(dir.join(TRAIN_LOG)).map_err(csv_err)?;
        train
            .write_record([
                "iteration",
                "phase",
                "model",
                "l_ph",
                "l_tds",
                "l_pseudo",
                "total",
                "gaussian_count",
            ])
            .map_err(csv_err)?;
        let mut densify = csv::Writer::from_path(dir.join(DENSIFY_LOG)).map_err(csv_err)?;
        densify
            .write_record([
                "iteration",
                "phase",
                "model",
                "before",
                "clones",
                "splits",
                "pruned",
                "total",
            ])
            .map_err(csv_err)?;
        Ok(Self { train, densify })
    }

    fn write(&mut self, r: &StepReport) -> Result<()> {
        for (k, l) in r.losses.iter().enumerate() {
            self.train
                .write_record([
                    r.iteration.to_string(),
                    r.phase.to_string(),
                    (k + 1).to_string(),
                    num(l.photometric),
                    num(l.smoothness),
                    num(l.pseudo),
                    num(l.total),
                    l.gaussian_count.to_string(),
                ])
                .map_err(csv_err)?;
        }
        for d in &r.densify {
            self.densify
                .write_record([
                    d.iteration.to_string(),
                    d.phase.to_string(),
                    d.model.to_string(),
                    d.before.to_string(),
                    d.clones.to_string(),
                    d.splits.to_string(),
                    d.pruned.to_string(),
                    d.total.to_string(),
                ])
                .map_err(csv_err)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.train.flush()?;
        self.densify.flush()?;
        Ok(())
    }
}

fn save_pair(state: &TrainState, dir: &Path, stem: &str) -> Result<()> {
    for (k, m) in state.models.iter().enumerate() {
        let name = if k == 0 {
            format!("{stem}.bin")
        } else {
            format!("{stem}_g2.bin")
        };
        save_checkpoint(&dir.join(name), &m.cloud, Some(&m.optimizer), state.iteration as u64)?;
    }
    Ok(())
}

/// Trains on `ds` and writes logs, periodic checkpoints and the final models
/// into `out_dir`. On failure both models are saved as `abort.bin` /
/// `abort_g2.bin` before the error is returned.
pub fn train(
    ds: &SceneDataset,
    config: &RunConfig,
    out_dir: &Path,
    progress: &mut dyn FnMut(&StepReport),
) -> Result<TrainOutputs> {
    config.validate()?;
    ds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = init_cloud(ds, &mut rng, config.sh_degree)?;
    let views: Vec<TrainView> = ds
        .sampled_train_frames(config.train_views)
        .into_iter()
        .map(|f| TrainView {
            camera: f.camera.clone(),
            image: f.image.clone(),
        })
        .collect();
    let mut state = TrainState::new(init, views, ds.scene_extent(), config.clone(), rng)?;

    std::fs::create_dir_all(out_dir)?;
    let ckpt_dir = out_dir.join("checkpoints");
    if config.checkpoint_interval > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    std::fs::write(out_dir.join(CONFIG_ECHO), config.to_toml_string()?)?;
    let mut logs = Logs::create(out_dir)?;
    let mut skipped = 0;

    while state.iteration < config.schedule.total_iters {
        let report = match train_step(&mut state) {
            Ok(r) => r,
            Err(e) => {
                let _ = logs.flush();
                save_pair(&state, out_dir, "abort")?;
                return Err(e);
            }
        };
        skipped += report.skipped;
        logs.write(&report)?;
        progress(&report);
        if config.checkpoint_interval > 0 && state.iteration % config.checkpoint_interval == 0 {
            save_pair(&state, &ckpt_dir, &format!("iter_{:06}", state.iteration))?;
        }
    }
    logs.flush()?;
    let [g1, g2] = &state.models;
    save_checkpoint(
        &out_dir.join(MODEL_FILE),
        &g1.cloud,
        Some(&g1.optimizer),
        state.iteration as u64,
    )?;
    save_checkpoint(
        &out_dir.join(SECOND_MODEL_FILE),
        &g2.cloud,
        Some(&g2.optimizer),
        state.iteration as u64,
    )?;
    Ok(TrainOutputs {
        dir: out_dir.to_path_buf(),
        final_counts: [g1.cloud.len(), g2.cloud.len()],
        model: g1.cloud.clone(),
        skipped,
    })
}
