//! Topic-vector synthesis environment.
//!
//! Seed documents carry a topic; a rubric of `L` tokens controls how the
//! generator turns a seed into a labeled example. Token 0 picks the topic
//! focus, token 1 the feature noise, token 2 the label-flip probability and
//! token 3 whether the output is well-formed. Validation and test data are
//! clean draws from the validation topics, so the most useful rubrics are
//! known in closed form.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::model::{norm, LabeledExample};
use crate::rng::{self, Stream};

/// Noise scale of validation and test draws around their prototype.
pub const HELDOUT_NOISE: f64 = 0.1;
/// Number of semantic tokens at the start of a rubric.
pub const SEMANTIC_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub topic_count: usize,
    pub feature_dim: usize,
    pub vocab: usize,
    pub rubric_length: usize,
    pub validation_topics: Vec<usize>,
    pub noise_grid: Vec<f64>,
    pub flip_grid: Vec<f64>,
    /// Seeds the topic prototypes.
    pub master_seed: u64,
    pub seed_count: usize,
    pub validation_size: usize,
    pub test_size: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            topic_count: 8,
            feature_dim: 16,
            vocab: 16,
            rubric_length: 4,
            validation_topics: vec![0, 1, 2],
            noise_grid: vec![0.05, 0.2, 0.5, 1.0],
            flip_grid: vec![0.0, 0.25, 0.5, 1.0],
            master_seed: 42,
            seed_count: 800,
            validation_size: 60,
            test_size: 600,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.topic_count < 2 {
            return bad("topic_count must be >= 2");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1");
        }
        if self.vocab < 2 {
            return bad("vocab must be >= 2");
        }
        if self.rubric_length < SEMANTIC_TOKENS {
            return bad("rubric_length must be >= 4");
        }
        if self.validation_topics.is_empty() {
            return bad("validation_topics must be non-empty");
        }
        if self.validation_topics.iter().any(|&t| t >= self.topic_count) {
            return bad("validation_topics out of range");
        }
        if self.noise_grid.is_empty() || self.noise_grid.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return bad("noise_grid must be non-empty and non-negative");
        }
        if self.flip_grid.is_empty() || self.flip_grid.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return bad("flip_grid entries must lie in [0, 1]");
        }
        if self.seed_count == 0 || self.validation_size == 0 || self.test_size == 0 {
            return bad("seed_count, validation_size and test_size must be >= 1");
        }
        Ok(())
    }

    /// Dimension of the policy conditioning vector: topic one-hot plus two
    /// noise summary statistics.
    pub fn context_dim(&self) -> usize {
        self.topic_count + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDocument {
    pub id: String,
    pub topic: usize,
    pub surface_noise: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMode {
    SeedTopic,
    ShiftPlusOne,
    RandomTopic,
    ValidationAligned,
}

impl FocusMode {
    pub const ALL: [FocusMode; 4] = [
        FocusMode::SeedTopic,
        FocusMode::ShiftPlusOne,
        FocusMode::RandomTopic,
        FocusMode::ValidationAligned,
    ];

    pub fn from_token(token: usize) -> Self {
        Self::ALL[token % 4]
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub focus_mode: FocusMode,
    pub noise_level: f64,
    pub flip_prob: f64,
    pub format_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Provenance {
    Synthetic { seed_id: String, tokens: Vec<usize> },
    Corpus { split: String },
}

/// One JSONL record: a generated or held-out labeled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
    pub wellformed: bool,
    pub provenance: Provenance,
}

impl SyntheticExample {
    pub fn labeled(&self) -> LabeledExample {
        LabeledExample::new(self.features.clone(), self.label)
    }
}

pub fn labeled(examples: &[SyntheticExample]) -> Vec<LabeledExample> {
    examples.iter().map(SyntheticExample::labeled).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    Formatting,
    NonTriviality,
    Safety,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::Formatting => "formatting",
            InvalidReason::NonTriviality => "non-triviality",
            InvalidReason::Safety => "safety",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub valid: bool,
    /// First failing check; `None` iff valid.
    pub reason: Option<InvalidReason>,
}

impl Validity {
    pub fn bit(&self) -> u8 {
        self.valid as u8
    }
}

/// Seeds plus disjoint validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seeds: Vec<SeedDocument>,
    pub validation: Vec<SyntheticExample>,
    pub test: Vec<SyntheticExample>,
}

/// Environment state: the config and its topic prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    config: EnvConfig,
    prototypes: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

impl Env {
    /// Builds prototypes: pseudo-random unit vectors from `config.master_seed`.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.master_seed, &[rng::TAG_PROTOTYPES]);
        let prototypes = (0..config.topic_count)
            .map(|_| {
                let v = gaussian(&mut r, config.feature_dim);
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        Ok(Self { config, prototypes })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn context_dim(&self) -> usize {
        self.config.context_dim()
    }

    /// Index of the closest prototype by Euclidean distance.
    pub fn nearest_prototype(&self, features: &[f64]) -> usize {
        let dist = |p: &[f64]| -> f64 { p.iter().zip(features).map(|(a, b)| (a - b) * (a - b)).sum() };
        (0..self.prototypes.len())
            .min_by(|&a, &b| dist(&self.prototypes[a]).total_cmp(&dist(&self.prototypes[b])))
            .expect("at least two topics")
    }

    fn context_for(&self, topic: usize, noise: &[f64]) -> Vec<f64> {
        let mut ctx = vec![0.0; self.config.topic_count];
        ctx[topic] = 1.0;
        let n = noise.len() as f64;
        let mean = noise.iter().sum::<f64>() / n;
        let rms = (noise.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
        ctx.push(mean);
        ctx.push(rms);
        ctx
    }

    fn heldout(&self, split: &str, prefix: &str, size: usize, tag: u64, seed: u64) -> Vec<SyntheticExample> {
        let mut r = rng::stream(seed, &[tag]);
        let topics = &self.config.validation_topics;
        (0..size)
            .map(|i| {
                let k = topics[r.random_range(0..topics.len())];
                let xi = gaussian(&mut r, self.config.feature_dim);
                SyntheticExample {
                    id: format!("{prefix}-{i:05}"),
                    features: self.prototypes[k]
                        .iter()
                        .zip(&xi)
                        .map(|(m, e)| m + HELDOUT_NOISE * e)
                        .collect(),
                    label: k,
                    wellformed: true,
                    provenance: Provenance::Corpus { split: split.to_string() },
                }
            })
            .collect()
    }

    /// Seeds drawn uniformly over topics; validation and test sets from
    /// disjoint substreams of `seed`.
    pub fn gen_corpus(&self, seed: u64) -> Corpus {
        let cfg = &self.config;
        let mut r = rng::stream(seed, &[rng::TAG_SEEDS]);
        let seeds = (0..cfg.seed_count)
            .map(|i| {
                let topic = r.random_range(0..cfg.topic_count);
                let noise = gaussian(&mut r, cfg.feature_dim);
                SeedDocument {
                    id: format!("seed-{i:05}"),
                    topic,
                    context: self.context_for(topic, &noise),
                    surface_noise: noise,
                }
            })
            .collect();
        Corpus {
            seeds,
            validation: self.heldout("validation", "val", cfg.validation_size, rng::TAG_VALIDATION, seed),
            test: self.heldout("test", "test", cfg.test_size, rng::TAG_TEST, seed),
        }
    }

    pub fn decode_rubric(&self, tokens: &[usize]) -> Result<RubricSpec> {
        let cfg = &self.config;
        contract(tokens.len() == cfg.rubric_length, || {
            format!("rubric has {} tokens, expected {}", tokens.len(), cfg.rubric_length)
        })?;
        contract(tokens.iter().all(|&t| t < cfg.vocab), || {
            format!("rubric token outside vocabulary of size {}", cfg.vocab)
        })?;
        Ok(RubricSpec {
            focus_mode: FocusMode::from_token(tokens[0]),
            noise_level: cfg.noise_grid[tokens[1] % cfg.noise_grid.len()],
            flip_prob: cfg.flip_grid[tokens[2] % cfg.flip_grid.len()],
            format_ok: tokens[3] < cfg.vocab / 2,
        })
    }

    /// Generator call: turns a seed document and rubric into a labeled example.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        seed_doc: &SeedDocument,
        tokens: &[usize],
        id: String,
        rng: &mut R,
    ) -> Result<SyntheticExample> {
        let rubric = self.decode_rubric(tokens)?;
        let cfg = &self.config;
        contract(seed_doc.topic < cfg.topic_count, || "seed topic out of range".into())?;
        let d = cfg.topic_count;
        let topic = match rubric.focus_mode {
            FocusMode::SeedTopic => seed_doc.topic,
            FocusMode::ShiftPlusOne => (seed_doc.topic + 1) % d,
            FocusMode::RandomTopic => rng.random_range(0..d),
            FocusMode::ValidationAligned => {
                cfg.validation_topics[rng.random_range(0..cfg.validation_topics.len())]
            }
        };
        let features = self.prototypes[topic]
            .iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                m + rubric.noise_level * e
            })
            .collect();
        let mut label = topic;
        if rng.random::<f64>() < rubric.flip_prob {
            let other = rng.random_range(0..d - 1);
            label = if other >= topic { other + 1 } else { other };
        }
        Ok(SyntheticExample {
            id,
            features,
            label,
            wellformed: rubric.format_ok,
            provenance: Provenance::Synthetic {
                seed_id: seed_doc.id.clone(),
                tokens: tokens.to_vec(),
            },
        })
    }

    /// Formatting, then non-triviality, then the label range check.
    pub fn validity(&self, example: &SyntheticExample) -> Validity {
        validity(example, self.config.topic_count)
    }
}

pub fn validity(example: &SyntheticExample, class_count: usize) -> Validity {
    let reason = if !example.wellformed {
        Some(InvalidReason::Formatting)
    } else if !(norm(&example.features) > 1e-9) {
        Some(InvalidReason::NonTriviality)
    } else if example.label >= class_count {
        Some(InvalidReason::Safety)
    } else {
        None
    };
    Validity {
        valid: reason.is_none(),
        reason,
    }
}
