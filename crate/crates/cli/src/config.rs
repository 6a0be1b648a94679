//! The run configuration document. Flags override individual fields; the
//! file itself is the unit of reproducibility.

use std::path::{Path, PathBuf};

use drivestyle::embed::EmbeddingConfig;
use drivestyle::features::{SignalRegistry, Thresholds, DEFAULT_TAU};
use drivestyle::ingest::CleanConfig;
use drivestyle::model::ModelConfig;
use drivestyle::pipeline::DEFAULT_SPLIT;
use drivestyle::semantic::LlmConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Per-event overrides; each defaults to `tau`.
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    #[serde(default = "default_signals")]
    pub signals: Vec<String>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Sequential, seeded execution everywhere. Disabling it allows the
    /// ablation variants to train in parallel.
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Defaults to `<out>/cache`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdOverrides {
    pub accel: Option<f64>,
    pub brake: Option<f64>,
    pub turn: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub steps: usize,
    pub dt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 250,
            steps: 300,
            dt: 0.1,
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_signals() -> Vec<String> {
    SignalRegistry::default().names()
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    /// A config with every default and the given seed.
    pub fn with_seed(seed: u64) -> Self {
        toml::from_str(&format!("seed = {seed}")).expect("defaults parse")
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.thresholds()?;
        self.registry()?;
        let [a, b, c] = self.split;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!(
                "split {:?} must be non-negative and sum to 1",
                self.split
            )));
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.synth.n_per_class == 0 || !(self.synth.dt > 0.0) {
            return Err(CliError::Config("synth needs n_per_class > 0 and dt > 0".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Result<Thresholds, CliError> {
        let t = Thresholds {
            accel: self.thresholds.accel.unwrap_or(self.tau),
            brake: self.thresholds.brake.unwrap_or(self.tau),
            turn: self.thresholds.turn.unwrap_or(self.tau),
        };
        if [t.accel, t.brake, t.turn].iter().any(|x| !(*x > 0.0)) {
            return Err(CliError::Config(format!("thresholds must be positive: {t:?}")));
        }
        Ok(t)
    }

    pub fn registry(&self) -> Result<SignalRegistry, CliError> {
        SignalRegistry::parse(&self.signals).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Model config with the run seed and the extracted feature width applied.
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            seed: self.seed,
            ..self.model.clone()
        }
    }
}
