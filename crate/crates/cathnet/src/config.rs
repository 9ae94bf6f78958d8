//! Run configuration, read from a TOML document.

use std::path::{Path, PathBuf};

use cathnet_core::losses::LossConfig;
use cathnet_core::model::NetworkConfig;
use cathnet_core::optim::AdamWConfig;
use cathnet_core::pipeline::DecodeConfig;
use cathnet_core::prioritizer::{PrioritizationPolicy, Task};
use cathnet_core::synth::{AugmentConfig, GeneratorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tasks {
    Detection,
    Segmentation,
    Both,
}

impl Tasks {
    pub fn active(self) -> &'static [Task] {
        match self {
            Tasks::Detection => &[Task::Detection],
            Tasks::Segmentation => &[Task::Segmentation],
            Tasks::Both => &Task::ALL,
        }
    }

    pub fn has(self, task: Task) -> bool {
        self.active().contains(&task)
    }
}

/// Either a dataset directory or an in-memory generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset written by `gen-data`; when absent, samples are generated.
    pub path: Option<PathBuf>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub generator: GeneratorConfig,
    pub augment: AugmentConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            train: 200,
            val: 50,
            test: 50,
            generator: GeneratorConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub iterations: u64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, iterations: 2000, batch_size: 8 }
    }
}

impl OptimConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Validate every this many iterations; 0 disables periodic validation.
    pub validate_every: u64,
    /// Save a resumable checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
    pub decode: DecodeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { validate_every: 100, checkpoint_every: 500, decode: DecodeConfig::default() }
    }
}

/// Which samples feed `difficulty_curves.csv` and how often.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    /// The first `tracked` training samples are recorded.
    pub tracked: usize,
    pub every: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { tracked: 12, every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2, 3, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: Tasks,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: NetworkConfig,
    pub optim: OptimConfig,
    pub losses: LossConfig,
    pub prioritization: PrioritizationPolicy,
    pub eval: EvalConfig,
    pub curves: CurveConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: Tasks::Both,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: NetworkConfig::default(),
            optim: OptimConfig::default(),
            losses: LossConfig::default(),
            prioritization: PrioritizationPolicy::default(),
            eval: EvalConfig::default(),
            curves: CurveConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.prioritization.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.data.path.is_none() {
            self.data.generator.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let g = self.data.generator.size;
            if self.model.input_size != [g, g] {
                return invalid(format!(
                    "model input {:?} does not match generated image size {g}×{g}",
                    self.model.input_size
                ));
            }
            if self.data.train == 0 {
                return invalid("data.train must be positive".into());
            }
        }
        if self.optim.batch_size == 0 {
            return invalid("optim.batch_size must be positive".into());
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return invalid("optim.lr must be positive".into());
        }
        Ok(())
    }

    /// Stable digest of the settings that shape the model and the run;
    /// checkpoints refuse to resume under a different hash.
    pub fn hash(&self) -> String {
        let relevant = serde_json::json!({
            "seed": self.seed,
            "tasks": self.tasks,
            "data": self.data,
            "model": self.model,
            "optim": {
                "lr": self.optim.lr, "beta1": self.optim.beta1, "beta2": self.optim.beta2,
                "eps": self.optim.eps, "weight_decay": self.optim.weight_decay,
                "batch_size": self.optim.batch_size,
            },
            "losses": self.losses,
            "prioritization": self.prioritization,
        });
        let digest = Sha256::digest(relevant.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
