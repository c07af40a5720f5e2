//! TOML run configuration.
//!
//! Relative paths are taken relative to the working directory. The top-level
//! `seed` is copied into every section (generator, training, grid), so one
//! number controls all randomness.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use winstate::dataset::synthetic::SyntheticConfig;
use winstate::dataset::{FeatureSchema, SplitFractions};
use winstate::evaluation::LagSweepOptions;
use winstate::training::{GridSpec, Hyperparams, ModelChoice, LAG_MINUTES_CHOICES};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_seed() -> u64 {
    42
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub data: DataConfig,
    pub train: Option<Hyperparams>,
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub lag_sweep: LagSweepConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            precision: Precision::default(),
            out_dir: default_out(),
            jobs: default_jobs(),
            data: DataConfig::default(),
            train: None,
            grid: None,
            eval: EvalConfig::default(),
            lag_sweep: LagSweepConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

/// Where the minute series comes from. Without `csv` the synthetic
/// generator is run in memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    /// Trigger log written by `gen-data`, used to label case studies.
    pub triggers: Option<PathBuf>,
    /// Static feature names; defaults to the synthetic schema.
    pub schema: Option<Vec<String>>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

impl DataConfig {
    pub fn schema(&self) -> Result<FeatureSchema, CliError> {
        match &self.schema {
            Some(names) => Ok(FeatureSchema::new(names.iter().cloned())?),
            None => Ok(FeatureSchema::default_synthetic()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    #[default]
    Test,
    Val,
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Model file; defaults to `<out_dir>/model.bin`.
    pub model: Option<PathBuf>,
    /// Preprocessing file; defaults to `<out_dir>/preprocessing.json`.
    pub preprocessing: Option<PathBuf>,
    #[serde(default)]
    pub split: EvalSplit,
    /// When ≥ 2, train this many models from `[train]` (seeds `seed..`) and
    /// evaluate each on the test split instead of loading a saved model.
    pub repeats: Option<usize>,
    #[serde(default)]
    pub choice: ModelChoice,
}

fn default_lags() -> Vec<usize> {
    LAG_MINUTES_CHOICES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSweepConfig {
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
    pub repeats: Option<usize>,
    pub extra_iterations: Option<u64>,
    pub extra_from_lag: Option<usize>,
    #[serde(default)]
    pub choice: ModelChoice,
}

impl Default for LagSweepConfig {
    fn default() -> Self {
        Self {
            lags: default_lags(),
            repeats: None,
            extra_iterations: None,
            extra_from_lag: None,
            choice: ModelChoice::Final,
        }
    }
}

impl LagSweepConfig {
    pub fn options(&self) -> LagSweepOptions {
        let d = LagSweepOptions::default();
        LagSweepOptions {
            repeats: self.repeats.unwrap_or(d.repeats),
            extra_iterations: self.extra_iterations.unwrap_or(d.extra_iterations),
            extra_from_lag: self.extra_from_lag.unwrap_or(d.extra_from_lag),
            choice: self.choice,
        }
    }
}

fn default_episodes() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub model: Option<PathBuf>,
    pub preprocessing: Option<PathBuf>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub split: EvalSplit,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            model: None,
            preprocessing: None,
            episodes: default_episodes(),
            split: EvalSplit::Test,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides and spreads the seed into every section.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(jobs) = o.jobs {
            self.jobs = jobs;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be >= 1".into()));
        }
        self.data.synthetic.seed = self.seed;
        if let Some(t) = self.train.as_mut() {
            t.seed = self.seed;
        }
        if let Some(g) = self.grid.as_mut() {
            g.seed = self.seed;
        }
        self.data.split.validate()?;
        Ok(self)
    }

    pub fn hyperparams(&self) -> Result<&Hyperparams, CliError> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [train] section".into()))
    }

    pub fn model_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join("model.bin"))
    }

    pub fn preprocessing_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.out_dir.join("preprocessing.json"))
    }
}
