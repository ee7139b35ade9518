//! Experiment configuration: JSON with defaults for every omitted key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grpo::GrpoHyper;
use crate::influence::{Aggregation, Variant};
use crate::model::{ClassifierSpec, PolicySpec};
use crate::optimizer::TrainConfig;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub hidden_dim: usize,
    pub bias: bool,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 0,
            bias: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarmupConfig {
    /// Share of the initial pool used to warm up the target.
    pub fraction: f64,
    pub epochs: usize,
    pub pool_size: usize,
    pub train: TrainConfig,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            fraction: 0.10,
            epochs: 3,
            pool_size: 2000,
            train: TrainConfig::adam(0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceConfig {
    pub variant: Variant,
    pub aggregation: Aggregation,
    /// Adam steps taken by the brute-force utility oracle.
    pub utility_steps: usize,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Adam,
            aggregation: Aggregation::Mean,
            utility_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    /// Outer updates K.
    pub updates: usize,
    /// Re-run warm-up with the current policy every N updates (ablation).
    pub rewarm_every: Option<usize>,
    pub smoothing_window: usize,
    /// How many of the most-sampled seeds to report focus probabilities for.
    pub top_seed_contexts: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            updates: 200,
            rewarm_every: None,
            smoothing_window: 20,
            top_seed_contexts: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Temperature-1 sampling.
    #[default]
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub size: usize,
    pub sampling: Sampling,
    /// Attempts allowed per requested example before giving up.
    pub retry_cap: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            size: 1000,
            sampling: Sampling::Sample,
            retry_cap: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub epochs: usize,
    pub train: TrainConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            train: TrainConfig::adam(0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateConfig {
    pub pool_size: usize,
    pub subset_size: usize,
    pub trials: usize,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        Self {
            pool_size: 2000,
            subset_size: 200,
            trials: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; also written into `env.master_seed` on resolution.
    pub seed: u64,
    pub env: EnvConfig,
    pub target: TargetConfig,
    pub warmup: WarmupConfig,
    pub influence: InfluenceConfig,
    pub grpo: GrpoHyper,
    pub rl: RlConfig,
    pub synthesis: SynthesisConfig,
    pub sft: SftConfig,
    pub correlate: CorrelateConfig,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            env: EnvConfig::default(),
            target: TargetConfig::default(),
            warmup: WarmupConfig::default(),
            influence: InfluenceConfig::default(),
            grpo: GrpoHyper::default(),
            rl: RlConfig::default(),
            synthesis: SynthesisConfig::default(),
            sft: SftConfig::default(),
            correlate: CorrelateConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn classifier_spec(&self) -> ClassifierSpec {
        ClassifierSpec {
            input_dim: self.env.feature_dim,
            hidden_dim: self.target.hidden_dim,
            class_count: self.env.topic_count,
            bias: self.target.bias,
        }
    }

    pub fn policy_spec(&self) -> PolicySpec {
        PolicySpec {
            vocab_size: self.env.vocab,
            rubric_length: self.env.rubric_length,
            context_dim: self.env.context_dim(),
        }
    }

    /// Applies a seed override and propagates the master seed.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Self> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.env.master_seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.env.validate()?;
        self.grpo.validate()?;
        self.warmup.train.validate()?;
        self.sft.train.validate()?;
        self.policy_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.warmup.fraction > 0.0 && self.warmup.fraction <= 1.0) {
            return bad("warmup.fraction out of range");
        }
        if self.warmup.epochs == 0 {
            return bad("warmup.epochs out of range");
        }
        if self.warmup.pool_size == 0 {
            return bad("warmup.pool_size out of range");
        }
        if self.influence.utility_steps == 0 {
            return bad("influence.utility_steps out of range");
        }
        if self.rl.rewarm_every == Some(0) {
            return bad("rl.rewarm_every out of range");
        }
        if self.rl.smoothing_window == 0 {
            return bad("rl.smoothing_window out of range");
        }
        if self.synthesis.size == 0 || self.synthesis.retry_cap == 0 {
            return bad("synthesis.size and synthesis.retry_cap must be >= 1");
        }
        if self.sft.epochs == 0 {
            return bad("sft.epochs out of range");
        }
        let c = &self.correlate;
        if c.subset_size == 0 || c.subset_size > c.pool_size {
            return bad("correlate.subset_size out of range");
        }
        if c.trials == 0 {
            return bad("correlate.trials out of range");
        }
        Ok(())
    }
}

/// Parses a JSON config; unknown keys and invariant violations are errors.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}
