//! Run configuration: one TOML file covering every stage.
//!
//! Unknown keys are rejected. Every field has a default, so an empty file is
//! a valid configuration; `RunConfig::default().to_toml()` prints them all.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ToyConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::loss::LossWeights;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;
use crate::transform::{build_transform_grid, DegradeConfig, TransformSet};

/// File name of the echoed, fully resolved configuration.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Transform grid: every combination of the listed translations (percent of
/// frame width / height) and rotations (degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub tx_pct: Vec<f64>,
    pub ty_pct: Vec<f64>,
    pub rot_deg: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tx_pct: vec![-5.0, -2.5, 0.0, 2.5, 5.0],
            ty_pct: vec![-5.0, 0.0, 5.0],
            rot_deg: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<TransformSet> {
        build_transform_grid(&self.tx_pct, &self.ty_pct, &self.rot_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// One full train/eval run per seed; seed `s` also picks split `s`.
    pub seeds: Vec<u64>,
    pub toy: ToyConfig,
    pub grid: GridConfig,
    pub degrade: DegradeConfig,
    pub flow: FlowConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            toy: ToyConfig::default(),
            grid: GridConfig::default(),
            degrade: DegradeConfig::default(),
            flow: FlowConfig::default(),
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(RESOLVED_CONFIG);
        fs::write(&p, self.to_toml()).map_err(|e| Error::io(&p, e))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        wrap(self.toy.validate())?;
        wrap(self.degrade.validate())?;
        wrap(self.flow.validate())?;
        wrap(self.model.validate())?;
        wrap(self.loss.validate())?;
        wrap(self.train.validate())?;
        let grid = wrap(self.grid.build().map(|_| ()))?;
        if self.model.num_classes != self.toy.num_classes {
            return Err(Error::Config(format!(
                "model.num_classes ({}) must equal toy.num_classes ({})",
                self.model.num_classes, self.toy.num_classes
            )));
        }
        if self.model.pyramid.min_frames() > self.toy.frames {
            return Err(Error::Config("pyramid needs more frames than toy.frames provides".into()));
        }
        Ok(grid)
    }

    pub fn transform_set(&self) -> Result<TransformSet> {
        self.grid.build()
    }
}
