//! Run configuration as a sectioned TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Result};
use crate::experiment::{ExperimentConfig, FitConfig, SweepGrid, CONVERGENCE_THRESHOLD};
use crate::mdlprobe::ProbeConfig;
use crate::ppo::PpoConfig;
use crate::pretrain::PretrainConfig;
use crate::taskgen::SyntheticTask;
use crate::textfeatures::{TextTask, Word};
use crate::transformer::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training prompts per condition.
    pub n_train: usize,
    pub n_test_per_quadrant: usize,
    pub eval_samples: usize,
    pub convergence_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 4096,
            n_test_per_quadrant: 512,
            eval_samples: 1,
            convergence_threshold: CONVERGENCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextConfig {
    pub task: TextTask,
    pub word: Word,
    pub n: usize,
    pub corpus: Option<PathBuf>,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            task: TextTask::Score,
            word: Word::Review,
            n: 1000,
            corpus: None,
        }
    }
}

/// Everything a command needs. `seed` is the only mandatory key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of every random stream.
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: SyntheticTask,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Fine-tuning run index within a condition.
    #[serde(default)]
    pub run: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub text: TextConfig,
}

fn default_task() -> SyntheticTask {
    SyntheticTask::Contains1
}

fn default_p() -> f64 {
    0.1
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            task: default_task(),
            p: default_p(),
            run: 0,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            probe: ProbeConfig::default(),
            ppo: PpoConfig::default(),
            data: DataConfig::default(),
            sweep: SweepGrid::default(),
            fit: FitConfig::default(),
            text: TextConfig::default(),
        }
    }

    /// The fast preset used by the acceptance suite.
    pub fn quick(seed: u64) -> Self {
        let e = ExperimentConfig::quick();
        Self {
            model: e.model,
            pretrain: e.pretrain,
            ppo: e.ppo,
            data: DataConfig {
                n_test_per_quadrant: e.n_test_per_quadrant,
                ..DataConfig::default()
            },
            ..Self::new(seed)
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model,
            pretrain: self.pretrain,
            probe: self.probe,
            ppo: self.ppo.clone(),
            n_train: self.data.n_train,
            n_test_per_quadrant: self.data.n_test_per_quadrant,
            eval_samples: self.data.eval_samples,
            convergence_threshold: self.data.convergence_threshold,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { seed: self.seed, ..self.fit }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CliError::Config(format!("p must be in [0, 1], got {}", self.p)));
        }
        if self.text.n == 0 {
            return Err(CliError::Config("text.n must be positive".into()));
        }
        if self.fit.resamples == 0 {
            return Err(CliError::Config("fit.resamples must be positive".into()));
        }
        self.experiment().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sweep.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}
