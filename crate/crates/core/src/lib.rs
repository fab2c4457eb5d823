//! Differentiable Gaussian splatting on the CPU, with a dual-model training
//! loop that alternates low and high densification phases.

pub mod config;
pub mod density;
pub mod error;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod train;
pub mod trajectory;

pub use config::{Ablation, DensifyMode, LossMode, RunConfig};
pub use density::{DensifyParams, DensityStats};
pub use error::{Error, Result};
pub use image::Image;
pub use io::{load_scene, save_scene, Frame, SceneDataset};
pub use loss::{LossWeights, Reduction};
pub use metrics::{depth_srocc, evaluate, psnr, EvalReport};
pub use raster::{render, render_backward, GradBundle, RenderOutput, Splat2D};
pub use scene::{build_covariance, eval_sh_color, normalize_quat, Camera, Gaussian3D, GaussianCloud};
pub use train::{phase_for_iteration, train, train_step, Phase, PhaseSchedule, TrainState};
