//! Adversarial knowledge distillation: the two identifiers, their losses,
//! the logit and feature baselines, and the alternating training loops.

mod identifiers;
mod losses;
mod report;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphio::GraphError;
use crate::models::ModelError;
use crate::numkit::NumError;

pub use identifiers::{de_global_prob, de_local_prob, diag_bilinear, dl_forward, LogitIdentifier, RepIdentifier};
pub use losses::{
    de_accuracy, de_discriminator_from_scores, de_discriminator_loss, de_generator_from_scores, de_generator_loss,
    de_scores, dl_accuracy, dl_discriminator_from_outputs, dl_discriminator_loss, dl_generator_from_outputs,
    dl_generator_loss, dl_outputs, fitnet_loss, kd_loss, DeScores, DeView, DlOutputs, Supervision, GLOBAL_TARGETS,
};
pub use report::{EpochRecord, FinalRecord, TrainReport};
pub use train::{
    graph_metric, node_accuracy, train_graph_level, train_graph_supervised, train_node_level, train_supervised,
    SupervisedConfig,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("bad distillation config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Which objectives the student is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Akd,
    AkdDeOnly,
    AkdDlOnly,
    Kd,
    Fitnet,
    None,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Akd, Mode::AkdDeOnly, Mode::AkdDlOnly, Mode::Kd, Mode::Fitnet, Mode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Akd => "akd",
            Mode::AkdDeOnly => "akd_de_only",
            Mode::AkdDlOnly => "akd_dl_only",
            Mode::Kd => "kd",
            Mode::Fitnet => "fitnet",
            Mode::None => "none",
        }
    }

    pub fn uses_de(self) -> bool {
        matches!(self, Mode::Akd | Mode::AkdDeOnly)
    }

    pub fn uses_dl(self) -> bool {
        matches!(self, Mode::Akd | Mode::AkdDlOnly)
    }

    pub fn is_adversarial(self) -> bool {
        self.uses_de() || self.uses_dl()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = DistillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DistillError::Config(format!("unknown mode {s:?}")))
    }
}

/// Generator steps per discriminator step accepted by [`DistillConfig`].
pub const K_GRID: [usize; 5] = [1, 5, 10, 20, 30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub mode: Mode,
    pub k: usize,
    pub epochs: usize,
    pub lr: f32,
    pub disc_lr: f32,
    pub task_loss_weight: f32,
    pub kd_temperature: f32,
    pub seed: u64,
    /// Drop the label terms from the logit identifier's objective.
    pub plain: bool,
    pub non_saturating: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Akd,
            k: 1,
            epochs: 300,
            lr: 0.01,
            disc_lr: 0.01,
            task_loss_weight: 1.0,
            kd_temperature: 2.0,
            seed: 0,
            plain: false,
            non_saturating: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: String| Err(DistillError::Config(m));
        if !K_GRID.contains(&self.k) {
            return bad(format!("k must be one of {K_GRID:?}, got {}", self.k));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("generator lr must be positive, got {}", self.lr));
        }
        if !(0.001..=0.05).contains(&self.disc_lr) {
            return bad(format!("discriminator lr must lie in [0.001, 0.05], got {}", self.disc_lr));
        }
        if !(self.task_loss_weight >= 0.0 && self.task_loss_weight.is_finite()) {
            return bad(format!("task loss weight must be non-negative, got {}", self.task_loss_weight));
        }
        if !(self.kd_temperature > 0.0 && self.kd_temperature.is_finite()) {
            return bad(format!("kd temperature must be positive, got {}", self.kd_temperature));
        }
        Ok(())
    }
}
