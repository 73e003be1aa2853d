//! Experiment configuration: a JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use loco_core::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitSpec {
    /// Train on facts appearing as constraint antecedents.
    #[default]
    T1,
    /// Train on a seeded uniform fraction of all facts.
    T1t2 { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Tabular,
    Embedding { dim: usize },
    Provider { endpoint: String },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Embedding { dim: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub facts_train: PathBuf,
    pub facts_eval: PathBuf,
    pub constraints: PathBuf,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSpec,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let SplitSpec::T1t2 { fraction, .. } = self.split {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(CliError::usage(format!(
                    "split fraction {fraction} is outside [0, 1]"
                )));
            }
        }
        self.train
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        Ok(())
    }
}

/// Flag overrides shared by `run`, `eval`, and `compare`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Training objective (sft | loco)
    #[arg(long)]
    pub objective: Option<String>,
    /// Seed driving init, shuffling, and sampling
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_name = "LAMBDA")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer (sgd | adaptive-moment)
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Split kind (t1 | t1t2)
    #[arg(long)]
    pub split: Option<String>,
    /// Fraction for the t1t2 split
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Seed for the t1t2 split
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Model kind (tabular | embedding | provider)
    #[arg(long)]
    pub model: Option<String>,
    /// Embedding dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Provider endpoint (tcp://host:port or cmd:program …)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn apply_overrides(config: &mut ExperimentConfig, o: &Overrides) -> Result<(), CliError> {
    if let Some(objective) = &o.objective {
        config.train.objective = match objective.as_str() {
            "sft" => loco_core::training::Objective::Sft,
            "loco" => loco_core::training::Objective::Loco,
            other => return Err(CliError::usage(format!("unknown objective '{other}'"))),
        };
    }
    if let Some(seed) = o.seed {
        config.train.seed = seed;
    }
    if let Some(epochs) = o.epochs {
        config.train.epochs = epochs;
    }
    if let Some(lr) = o.learning_rate {
        config.train.learning_rate = lr;
    }
    if let Some(wd) = o.weight_decay {
        config.train.weight_decay = wd;
    }
    if let Some(bs) = o.batch_size {
        config.train.batch_size = bs;
    }
    if let Some(optimizer) = &o.optimizer {
        config.train.optimizer = match optimizer.as_str() {
            "sgd" => loco_core::training::OptimizerKind::Sgd,
            "adaptive-moment" => loco_core::training::OptimizerKind::AdaptiveMoment,
            other => return Err(CliError::usage(format!("unknown optimizer '{other}'"))),
        };
    }
    match o.split.as_deref() {
        None => {}
        Some("t1") => config.split = SplitSpec::T1,
        Some("t1t2") => {
            let (fraction, seed) = match config.split {
                SplitSpec::T1t2 { fraction, seed } => (fraction, seed),
                SplitSpec::T1 => (0.05, config.train.seed),
            };
            config.split = SplitSpec::T1t2 { fraction, seed };
        }
        Some(other) => return Err(CliError::usage(format!("unknown split '{other}'"))),
    }
    if let Some(fraction) = o.fraction {
        let seed = match config.split {
            SplitSpec::T1t2 { seed, .. } => seed,
            SplitSpec::T1 => config.train.seed,
        };
        config.split = SplitSpec::T1t2 { fraction, seed };
    }
    if let Some(split_seed) = o.split_seed {
        if let SplitSpec::T1t2 { fraction, .. } = config.split {
            config.split = SplitSpec::T1t2 {
                fraction,
                seed: split_seed,
            };
        } else {
            return Err(CliError::usage(
                "--split-seed requires the t1t2 split".to_string(),
            ));
        }
    }
    match o.model.as_deref() {
        None => {}
        Some("tabular") => config.model = ModelSpec::Tabular,
        Some("embedding") => {
            let dim = match config.model {
                ModelSpec::Embedding { dim } => dim,
                _ => 32,
            };
            config.model = ModelSpec::Embedding { dim };
        }
        Some("provider") => {
            let endpoint = o.endpoint.clone().or(match &config.model {
                ModelSpec::Provider { endpoint } => Some(endpoint.clone()),
                _ => None,
            });
            let endpoint = endpoint
                .ok_or_else(|| CliError::usage("provider model needs --endpoint".to_string()))?;
            config.model = ModelSpec::Provider { endpoint };
        }
        Some(other) => return Err(CliError::usage(format!("unknown model '{other}'"))),
    }
    if let Some(dim) = o.dim {
        config.model = ModelSpec::Embedding { dim };
    }
    if let Some(endpoint) = &o.endpoint {
        config.model = ModelSpec::Provider {
            endpoint: endpoint.clone(),
        };
    }
    if let Some(out) = &o.out {
        config.out_dir = out.clone();
    }
    config.validate()
}
