//! Run configuration: schedule, thresholds, loss weights, optimizer, ablations.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::DensifyParams;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::train::{OptimizerConfig, PhaseSchedule, PseudoViewConfig};

/// Which thresholds the alternating blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensifyMode {
    /// Low blocks use the strict thresholds, high blocks the permissive ones.
    Alternating,
    /// Every block uses the permissive thresholds.
    HighOnly,
}

/// Which objective each phase minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Combined loss in low blocks, photometric elsewhere.
    Alternating,
    /// Photometric loss everywhere.
    Photometric,
    /// Combined loss in every block after warm-up.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// No alternating densification.
    A,
    /// No alternating loss (photometric only).
    B,
    /// Combined loss throughout, no alternating densification.
    C,
    /// No pseudo-view consistency.
    D,
    /// No edge-aware smoothness (range term kept).
    E,
    /// No depth smoothness at all.
    F,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Ablation::A),
            "B" => Ok(Ablation::B),
            "C" => Ok(Ablation::C),
            "D" => Ok(Ablation::D),
            "E" => Ok(Ablation::E),
            "F" => Ok(Ablation::F),
            _ => Err(Error::Config(format!("unknown ablation {s:?}, expected one of A-F"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Spherical-harmonics degree of the trained models (0 to 2).
    pub sh_degree: usize,
    pub schedule: PhaseSchedule,
    pub densify_high: DensifyParams,
    pub densify_low: DensifyParams,
    pub densify_mode: DensifyMode,
    /// Densify and prune with the permissive thresholds during warm-up.
    pub warmup_densify: bool,
    pub warmup_densify_interval: usize,
    pub loss_mode: LossMode,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub pseudo_view: PseudoViewConfig,
    /// Use this many evenly spaced training frames instead of all of them.
    pub train_views: Option<usize>,
    /// Save both models every this many iterations; 0 disables.
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sh_degree: 0,
            schedule: PhaseSchedule::default(),
            densify_high: DensifyParams::high(),
            densify_low: DensifyParams::low(),
            densify_mode: DensifyMode::Alternating,
            warmup_densify: true,
            warmup_densify_interval: 100,
            loss_mode: LossMode::Alternating,
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            pseudo_view: PseudoViewConfig::default(),
            train_views: None,
            checkpoint_interval: 1000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.sh_degree > crate::scene::MAX_SH_DEGREE {
            return Err(Error::Config(format!(
                "sh_degree {} exceeds {}",
                self.sh_degree,
                crate::scene::MAX_SH_DEGREE
            )));
        }
        self.densify_high.validate()?;
        self.densify_low.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.warmup_densify && self.warmup_densify_interval == 0 {
            return Err(Error::Config("warmup_densify_interval must be at least 1".into()));
        }
        if self.train_views == Some(0) {
            return Err(Error::Config("train_views must be at least 1".into()));
        }
        let p = &self.pseudo_view;
        if !(p.max_angle_deg >= 0.0) || !(p.max_trans_frac >= 0.0) {
            return Err(Error::Config(
                "pseudo-view perturbation bounds must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_toml_str(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::A => self.densify_mode = DensifyMode::HighOnly,
            Ablation::B => {
                self.loss_mode = LossMode::Photometric;
                self.loss.lambda2 = 0.0;
                self.loss.lambda3 = 0.0;
            }
            Ablation::C => {
                self.loss_mode = LossMode::Combined;
                self.densify_mode = DensifyMode::HighOnly;
            }
            Ablation::D => self.loss.lambda3 = 0.0,
            Ablation::E => self.loss.edge_smoothness = false,
            Ablation::F => self.loss.lambda2 = 0.0,
        }
    }

    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        if let Some(a) = ablation {
            self.apply_ablation(a);
        }
        self
    }
}
