//! Batch construction, the two-stage training schedule, evaluation and
//! multi-seed experiments.

mod dataset;
mod experiment;
mod metrics;
mod plan;
mod stages;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{FeatureCache, LrDataset, SourceVideos};
pub use experiment::{
    distance_ratio, embed_sources, mean_std, pretrain_streams, run_experiment, train_one, ExperimentData,
    ExperimentReport, RunStats, SeedOutcome, TrainSplit,
};
pub use metrics::{evaluate, metrics_from_predictions, BinaryMetrics, Metrics};
pub use plan::{build_batch_plan, epoch_batches, BatchPlan, PlanItem};
pub use stages::{stage1_pretrain, stage2_train, write_history, EpochRecord, Stage2Outcome, StepInput};

/// Training objective, mirroring the three compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One identity-transform LR video per source, classification loss only.
    Baseline,
    /// The same multi-transform LR pool as `MultiSiamese`, classification
    /// loss only.
    Augment,
    /// Multi-Siamese embedding loss plus classification loss.
    MultiSiamese,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Augment, Mode::MultiSiamese];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Augment => "augment",
            Mode::MultiSiamese => "multi-siamese",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?} (expected baseline, augment or multi-siamese)")))
    }
}

/// How a stage-2 step reduces its per-branch terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    /// Plain sum over the step's items and branches.
    Sum,
    /// Sum divided by the number of branches in the step, which keeps the
    /// gradient scale independent of `n` and the mode.
    Mean,
}

/// Per-stream frame-classification pretraining on the identity LR videos
/// of the training sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub skip: bool,
    pub lr: f32,
    pub momentum: f32,
    /// Frames per SGD step.
    pub batch_frames: usize,
    pub steps: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            skip: false,
            lr: 0.01,
            momentum: 0.9,
            batch_frames: 64,
            steps: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub stage1: Stage1Config,
    pub lr: f32,
    pub momentum: f32,
    /// Source videos per step.
    pub batch_size: usize,
    /// Branches per side: `n` transforms of the item plus `n` other videos.
    pub n: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of each class's training sources held out for validation.
    pub val_fraction: f64,
    /// Keep the stage-1 stream weights fixed in stage 2. Per-frame features
    /// are then computed once and cached.
    pub freeze_streams: bool,
    pub loss_reduction: LossReduction,
    /// Upper bound on the joint L2 norm of each stage-2 step's gradients.
    pub grad_clip: Option<f32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MultiSiamese,
            stage1: Stage1Config::default(),
            lr: 0.003,
            momentum: 0.9,
            batch_size: 4,
            n: 8,
            max_epochs: 30,
            patience: 5,
            val_fraction: 0.2,
            freeze_streams: false,
            loss_reduction: LossReduction::Sum,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch_size and max_epochs must be >= 1"));
        }
        if self.n < 2 && self.mode != Mode::Baseline {
            return Err(Error::invalid(format!("n must be >= 2 in {} mode, got {}", self.mode, self.n)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("lr must be > 0 and momentum in [0, 1)"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("grad_clip must be > 0"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must be in [0, 1)"));
        }
        let s = &self.stage1;
        if !s.skip && (s.batch_frames == 0 || !(s.lr > 0.0) || !(0.0..1.0).contains(&s.momentum)) {
            return Err(Error::invalid("stage1 needs batch_frames >= 1, lr > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
