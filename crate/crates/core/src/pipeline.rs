//! End-to-end orchestration: warm-up, prompter RL, dataset synthesis, target
//! fine-tuning and evaluation, and the influence/accuracy correlation study.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Sampling};
use crate::env::{labeled, Corpus, Env, FocusMode, SeedDocument, SyntheticExample};
use crate::error::{Error, Result};
use crate::grpo::{grpo_update, RolloutContext, RolloutGroup, UpdateStats};
use crate::influence::InfluenceScorer;
use crate::model::{ClassifierSpec, PolicySpec};
use crate::optimizer::{train_epochs, TrainingTrajectory};
use crate::params::ParamVector;
use crate::rng;
use crate::stats;

/// Fully built experiment: resolved config, environment and corpus.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Env,
    pub corpus: Corpus,
    pub classifier: ClassifierSpec,
    pub policy: PolicySpec,
}

#[derive(Debug, Clone)]
pub struct WarmupOutcome {
    pub trajectory: TrainingTrajectory,
    pub initial_policy: ParamVector,
    /// Valid examples synthesized by the initial policy.
    pub pool: Vec<SyntheticExample>,
    pub warmup_size: usize,
    /// Mean validation loss before training and after each epoch.
    pub val_losses: Vec<f64>,
}

/// One line of `rollouts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub update_idx: usize,
    pub seed_id: String,
    pub tokens: Vec<usize>,
    pub valid: bool,
    pub raw_if: Option<f64>,
    pub if_norm: Option<f64>,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusProbability {
    pub seed_id: String,
    pub topic: usize,
    pub visits: usize,
    pub p_validation_aligned: f64,
}

#[derive(Debug, Clone)]
pub struct PrompterOutcome {
    pub policy: ParamVector,
    pub stats: Vec<UpdateStats>,
    pub rollouts: Vec<RolloutRecord>,
    pub visits: BTreeMap<String, usize>,
    /// Trajectory used for scoring at the end of training.
    pub trajectory: TrainingTrajectory,
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub test_accuracy: f64,
    pub val_accuracy: f64,
    pub params: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// (mean influence of subset, test accuracy after fine-tuning on it)
    pub pairs: Vec<(f64, f64)>,
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    /// True when correlation is undefined (too few trials or zero variance).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub pool_size: usize,
    pub warmup_size: usize,
    pub val_loss_by_epoch: Vec<f64>,
    pub trajectory_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlReport {
    pub updates: usize,
    pub mean_reward: Vec<f64>,
    pub smoothed_reward: Vec<f64>,
    pub first_window_mean: Option<f64>,
    pub last_window_mean: Option<f64>,
    pub top_seed_focus: Vec<FocusProbability>,
    pub mean_top_focus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub size: usize,
    pub pre_mean_if: f64,
    pub post_mean_if: f64,
    pub welch_t: Option<f64>,
    pub welch_p_greater: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    pub pre_test_accuracy: f64,
    pub post_test_accuracy: f64,
    pub pre_val_accuracy: f64,
    pub post_val_accuracy: f64,
}

/// Everything a run reports; sections are filled by the stages that ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub warmup: Option<WarmupReport>,
    pub rl: Option<RlReport>,
    pub synthesis: Option<SynthesisReport>,
    pub sft: Option<SftReport>,
    pub correlation: Option<CorrelationReport>,
}

impl MetricsReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            warmup: None,
            rl: None,
            synthesis: None,
            sft: None,
            correlation: None,
        }
    }

    /// Accuracies in [0, 1].
    pub fn validate(&self) -> Result<()> {
        let mut accs = Vec::new();
        if let Some(s) = &self.sft {
            accs.extend([s.pre_test_accuracy, s.post_test_accuracy, s.pre_val_accuracy, s.post_val_accuracy]);
        }
        if let Some(c) = &self.correlation {
            accs.extend(c.pairs.iter().map(|p| p.1));
        }
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Contract("reported accuracy outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Artifacts of a full pipeline run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub warmup: WarmupOutcome,
    pub prompter: PrompterOutcome,
    pub dataset_pre: Vec<SyntheticExample>,
    pub dataset_post: Vec<SyntheticExample>,
}

/// Probability that the first rubric token selects validation-aligned focus.
pub fn validation_aligned_mass(spec: &PolicySpec, policy: &ParamVector, context: &[f64]) -> Result<f64> {
    let dist = spec.first_token_dist(policy, context)?;
    Ok(dist
        .iter()
        .enumerate()
        .filter(|(t, _)| FocusMode::from_token(*t) == FocusMode::ValidationAligned)
        .map(|(_, p)| p)
        .sum())
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::new(config.env.clone())?;
        let corpus = env.gen_corpus(config.seed);
        Ok(Self {
            classifier: config.classifier_spec(),
            policy: config.policy_spec(),
            config,
            env,
            corpus,
        })
    }

    pub fn validation(&self) -> Vec<crate::model::LabeledExample> {
        labeled(&self.corpus.validation)
    }

    pub fn test(&self) -> Vec<crate::model::LabeledExample> {
        labeled(&self.corpus.test)
    }

    pub fn initial_policy(&self) -> ParamVector {
        self.policy.init_params()
    }

    pub fn scorer(&self, trajectory: &TrainingTrajectory) -> Result<InfluenceScorer> {
        InfluenceScorer::new(
            &self.classifier,
            trajectory,
            &self.validation(),
            self.config.influence.variant,
            self.config.warmup.train.adam,
            self.config.influence.aggregation,
        )
    }

    /// Draws `n` valid examples from `policy`. Example `i` uses its own
    /// substream, so output is independent of scheduling. Invalid generations
    /// are retried with a fresh seed and rubric up to `retry_cap` times.
    pub fn synthesize_dataset(
        &self,
        policy: &ParamVector,
        n: usize,
        prefix: &str,
        stream_tag: u64,
    ) -> Result<Vec<SyntheticExample>> {
        if n == 0 {
            return Err(Error::Contract("synthesize_dataset needs n >= 1".into()));
        }
        let cfg = &self.config.synthesis;
        let base = rng::derive(self.config.seed, &[stream_tag]);
        let seeds = &self.corpus.seeds;
        let results = self.config.execution.map_range(n, |i| -> Result<Option<SyntheticExample>> {
            let mut r = rng::stream(base, &[i as u64]);
            for _ in 0..cfg.retry_cap {
                let seed_doc = &seeds[r.random_range(0..seeds.len())];
                let tokens = match cfg.sampling {
                    Sampling::Sample => self.policy.sample(policy, &seed_doc.context, 1.0, &mut r)?.tokens,
                    Sampling::Greedy => self.greedy_rubric(policy, &seed_doc.context),
                };
                let ex = self.env.generate(seed_doc, &tokens, format!("{prefix}-{i:06}"), &mut r)?;
                if self.env.validity(&ex).valid {
                    return Ok(Some(ex));
                }
            }
            Ok(None)
        });
        let mut out = Vec::with_capacity(n);
        for r in results {
            if let Some(ex) = r? {
                out.push(ex);
            }
        }
        if out.len() < n {
            return Err(Error::RetryCapExhausted {
                produced: out.len(),
                requested: n,
                attempts: n * cfg.retry_cap,
            });
        }
        Ok(out)
    }

    /// Dataset of size `n` from the initial policy.
    pub fn synthesize_pre(&self, n: usize) -> Result<Vec<SyntheticExample>> {
        self.synthesize_dataset(&self.initial_policy(), n, "pre", rng::TAG_SYNTH_PRE)
    }

    /// Dataset of size `n` from a trained policy.
    pub fn synthesize_post(&self, policy: &ParamVector, n: usize) -> Result<Vec<SyntheticExample>> {
        self.synthesize_dataset(policy, n, "post", rng::TAG_SYNTH_POST)
    }

    /// Pool for the correlation study, drawn from the initial policy.
    pub fn correlation_pool(&self) -> Result<Vec<SyntheticExample>> {
        self.synthesize_dataset(&self.initial_policy(), self.config.correlate.pool_size, "corr", rng::TAG_CORRELATE)
    }

    /// Seed of the fresh target used for final fine-tuning.
    pub fn sft_seed(&self) -> u64 {
        rng::derive(self.config.seed, &[rng::TAG_SFT])
    }

    fn greedy_rubric(&self, policy: &ParamVector, context: &[f64]) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(self.policy.rubric_length);
        for t in 0..self.policy.rubric_length {
            let z = self.policy.logits_at(policy, context, t, tokens.last().copied());
            let best = (0..z.len()).fold(0, |b, a| if z[a] > z[b] { a } else { b });
            tokens.push(best);
        }
        tokens
    }

    /// Trains the target with Adam on part of a pool synthesized by `policy`.
    pub fn warmup_with_policy(&self, policy: &ParamVector, round: u64) -> Result<WarmupOutcome> {
        let cfg = &self.config.warmup;
        let pool = self
            .synthesize_dataset(policy, cfg.pool_size, &format!("pool{round}"), rng::derive(rng::TAG_WARMUP_POOL, &[round]))
            .map_err(|e| match e {
                Error::RetryCapExhausted { produced, requested, .. } => Error::Degenerate(format!(
                    "warm-up pool: only {produced} of {requested} generations were valid"
                )),
                other => other,
            })?;
        let warmup_size = ((cfg.fraction * pool.len() as f64).round() as usize).clamp(1, pool.len());
        let data = labeled(&pool[..warmup_size]);
        let params0 = self.classifier.init_params(self.config.seed);
        let mut r = rng::stream(self.config.seed, &[rng::TAG_WARMUP_TRAIN, round]);
        let trajectory = train_epochs(&self.classifier, &params0, &data, &cfg.train, cfg.epochs, &mut r)?;
        let val = self.validation();
        let mut val_losses = vec![self.classifier.mean_loss(&params0, &val)?];
        for c in trajectory.checkpoints() {
            val_losses.push(self.classifier.mean_loss(&c.params, &val)?);
        }
        Ok(WarmupOutcome {
            trajectory,
            initial_policy: policy.clone(),
            pool,
            warmup_size,
            val_losses,
        })
    }

    pub fn warmup(&self) -> Result<WarmupOutcome> {
        self.warmup_with_policy(&self.initial_policy(), 0)
    }

    /// GRPO training of the prompter against a fixed warm-up trajectory.
    pub fn train_prompter(&self, trajectory: &TrainingTrajectory) -> Result<PrompterOutcome> {
        let hyper = &self.config.grpo;
        let reference = self.initial_policy();
        let mut params = reference.clone();
        let mut trajectory = trajectory.clone();
        let mut scorer = self.scorer(&trajectory)?;
        let mut stats = Vec::with_capacity(self.config.rl.updates);
        let mut rollouts = Vec::new();
        let mut visits: BTreeMap<String, usize> = BTreeMap::new();
        let seeds = &self.corpus.seeds;
        let rollout_seed = rng::derive(self.config.seed, &[rng::TAG_RL]);

        for k in 0..self.config.rl.updates {
            if let Some(every) = self.config.rl.rewarm_every {
                if k > 0 && k % every == 0 {
                    trajectory = self.warmup_with_policy(&params, (k / every) as u64)?.trajectory;
                    scorer = self.scorer(&trajectory)?;
                }
            }
            let mut r = rng::stream(rollout_seed, &[k as u64, u64::MAX]);
            let batch: Vec<&SeedDocument> = (0..hyper.seeds_per_update)
                .map(|_| &seeds[r.random_range(0..seeds.len())])
                .collect();
            for s in &batch {
                *visits.entry(s.id.clone()).or_default() += 1;
            }
            let ctx = RolloutContext {
                spec: &self.policy,
                env: &self.env,
                scorer: &scorer,
                hyper,
                exec: self.config.execution,
            };
            let groups = ctx.collect_batch(&params, &batch, rollout_seed, k)?;
            rollouts.extend(rollout_records(k, &groups));
            let (next, st) = grpo_update(&self.policy, &params, &groups, &reference, hyper)?;
            params = next;
            stats.push(st);
        }
        Ok(PrompterOutcome {
            policy: params,
            stats,
            rollouts,
            visits,
            trajectory,
        })
    }

    /// Most-sampled seeds (ties by id) with their validation-aligned mass.
    pub fn top_seed_focus(&self, policy: &ParamVector, visits: &BTreeMap<String, usize>) -> Result<Vec<FocusProbability>> {
        let mut ranked: Vec<(&String, &usize)> = visits.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(self.config.rl.top_seed_contexts)
            .map(|(id, &n)| {
                let doc = self
                    .corpus
                    .seeds
                    .iter()
                    .find(|s| &s.id == id)
                    .expect("visited seeds come from the corpus");
                Ok(FocusProbability {
                    seed_id: id.clone(),
                    topic: doc.topic,
                    visits: n,
                    p_validation_aligned: validation_aligned_mass(&self.policy, policy, &doc.context)?,
                })
            })
            .collect()
    }

    /// Fresh target trained with Adam on `dataset`; returns test accuracy.
    pub fn sft_and_eval(&self, dataset: &[SyntheticExample], sft_seed: u64) -> Result<SftOutcome> {
        if dataset.is_empty() {
            return Err(Error::Empty("SFT dataset"));
        }
        let params0 = self.classifier.init_params(sft_seed);
        let mut r = rng::stream(sft_seed, &[rng::TAG_SFT]);
        let traj = train_epochs(
            &self.classifier,
            &params0,
            &labeled(dataset),
            &self.config.sft.train,
            self.config.sft.epochs,
            &mut r,
        )?;
        let params = traj.last().params.clone();
        Ok(SftOutcome {
            test_accuracy: self.classifier.accuracy(&params, &self.test())?,
            val_accuracy: self.classifier.accuracy(&params, &self.validation())?,
            params,
        })
    }

    /// Random-subset study of mean influence against downstream accuracy.
    /// Each trial owns its subset draw and fine-tuning seed.
    pub fn correlate_if_accuracy(
        &self,
        pool: &[SyntheticExample],
        trajectory: &TrainingTrajectory,
        subset_size: usize,
        trials: usize,
    ) -> Result<CorrelationReport> {
        if trials == 0 {
            return Err(Error::Contract("correlate needs at least one trial".into()));
        }
        if subset_size == 0 || subset_size > pool.len() {
            return Err(Error::Contract(format!(
                "subset_size {subset_size} must lie in 1..={}",
                pool.len()
            )));
        }
        let scorer = self.scorer(trajectory)?;
        let scores = scorer.score_all(self.config.execution, &labeled(pool))?;
        let base = rng::derive(self.config.seed, &[rng::TAG_CORRELATE]);
        let pairs = self.config.execution.map_range(trials, |t| -> Result<(f64, f64)> {
            let mut r = rng::stream(base, &[t as u64]);
            let idx = sample_indices(&mut r, pool.len(), subset_size).into_vec();
            let mean_if = idx.iter().map(|&i| scores[i]).sum::<f64>() / subset_size as f64;
            let subset: Vec<SyntheticExample> = idx.iter().map(|&i| pool[i].clone()).collect();
            let acc = self.sft_and_eval(&subset, rng::derive(base, &[t as u64, 1]))?.test_accuracy;
            Ok((mean_if, acc))
        });
        let pairs = pairs.into_iter().collect::<Result<Vec<_>>>()?;
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let pearson_r = stats::pearson(&xs, &ys);
        let spearman_rho = stats::spearman(&xs, &ys);
        Ok(CorrelationReport {
            degenerate: pearson_r.is_none(),
            pairs,
            pearson_r,
            spearman_rho,
        })
    }

    pub fn rl_report(&self, outcome: &PrompterOutcome) -> Result<RlReport> {
        let rewards: Vec<f64> = outcome.stats.iter().map(|s| s.mean_reward).collect();
        let w = self.config.rl.smoothing_window;
        let window = |xs: &[f64]| (!xs.is_empty()).then(|| stats::mean(xs));
        let n = rewards.len();
        let top = self.top_seed_focus(&outcome.policy, &outcome.visits)?;
        let focus: Vec<f64> = top.iter().map(|f| f.p_validation_aligned).collect();
        Ok(RlReport {
            updates: n,
            smoothed_reward: stats::trailing_mean(&rewards, w),
            first_window_mean: window(&rewards[..w.min(n)]),
            last_window_mean: window(&rewards[n.saturating_sub(w)..]),
            mean_reward: rewards,
            mean_top_focus: window(&focus),
            top_seed_focus: top,
        })
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<RunArtifacts> {
        let mut report = MetricsReport::new(self.config.clone());

        let warmup = self.warmup().map_err(|e| stage("warmup", e))?;
        report.warmup = Some(WarmupReport {
            pool_size: warmup.pool.len(),
            warmup_size: warmup.warmup_size,
            val_loss_by_epoch: warmup.val_losses.clone(),
            trajectory_id: warmup.trajectory.id(),
        });

        let prompter = self.train_prompter(&warmup.trajectory).map_err(|e| stage("train-prompter", e))?;
        report.rl = Some(self.rl_report(&prompter)?);

        let n = self.config.synthesis.size;
        let dataset_pre = self.synthesize_pre(n).map_err(|e| stage("synthesize", e))?;
        let dataset_post = self
            .synthesize_post(&prompter.policy, n)
            .map_err(|e| stage("synthesize", e))?;
        report.synthesis = Some(self.synthesis_report(&warmup.trajectory, &dataset_pre, &dataset_post)?);

        let sft_seed = self.sft_seed();
        let pre = self.sft_and_eval(&dataset_pre, sft_seed).map_err(|e| stage("sft", e))?;
        let post = self.sft_and_eval(&dataset_post, sft_seed).map_err(|e| stage("sft", e))?;
        report.sft = Some(SftReport {
            pre_test_accuracy: pre.test_accuracy,
            post_test_accuracy: post.test_accuracy,
            pre_val_accuracy: pre.val_accuracy,
            post_val_accuracy: post.val_accuracy,
        });

        let c = &self.config.correlate;
        let pool = self.correlation_pool().map_err(|e| stage("correlate", e))?;
        report.correlation = Some(
            self.correlate_if_accuracy(&pool, &warmup.trajectory, c.subset_size, c.trials)
                .map_err(|e| stage("correlate", e))?,
        );
        report.validate()?;

        Ok(RunArtifacts {
            report,
            warmup,
            prompter,
            dataset_pre,
            dataset_post,
        })
    }

    pub fn synthesis_report(
        &self,
        trajectory: &TrainingTrajectory,
        pre: &[SyntheticExample],
        post: &[SyntheticExample],
    ) -> Result<SynthesisReport> {
        let scorer = self.scorer(trajectory)?;
        let a = scorer.score_all(self.config.execution, &labeled(pre))?;
        let b = scorer.score_all(self.config.execution, &labeled(post))?;
        let welch = stats::welch_greater(&b, &a);
        Ok(SynthesisReport {
            size: pre.len(),
            pre_mean_if: stats::mean(&a),
            post_mean_if: stats::mean(&b),
            welch_t: welch.map(|w| w.t),
            welch_p_greater: welch.map(|w| w.p_greater),
        })
    }
}

/// Prefixes an error with the pipeline stage that raised it.
pub fn stage(name: &'static str, e: Error) -> Error {
    Error::Stage {
        stage: name,
        source: Box::new(e),
    }
}

pub fn rollout_records(update_idx: usize, groups: &[RolloutGroup]) -> Vec<RolloutRecord> {
    let mut out = Vec::new();
    for g in groups {
        let adv = g.advantages.as_deref().unwrap_or(&[]);
        for (j, t) in g.trajectories.iter().enumerate() {
            out.push(RolloutRecord {
                update_idx,
                seed_id: t.seed_id.clone(),
                tokens: t.tokens.clone(),
                valid: t.valid,
                raw_if: t.raw_if,
                if_norm: t.if_norm,
                reward: t.reward.unwrap_or(f64::NAN),
                advantage: adv.get(j).copied().unwrap_or(f64::NAN),
            });
        }
    }
    out
}

/// Writes `update_idx,mean_reward,mean_if,kl,entropy,clip_frac`.
pub fn write_stats_csv<W: Write>(out: W, stats: &[UpdateStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update_idx", "mean_reward", "mean_if", "kl", "entropy", "clip_frac"])?;
    for (k, s) in stats.iter().enumerate() {
        w.write_record([
            k.to_string(),
            s.mean_reward.to_string(),
            s.mean_if.to_string(),
            s.kl.to_string(),
            s.entropy.to_string(),
            s.clip_frac.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Saved policy: spec plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    pub spec: PolicySpec,
    pub params: ParamVector,
}

impl PolicyFile {
    pub fn new(spec: PolicySpec, params: ParamVector) -> Self {
        Self { version: 1, spec, params }
    }
}

/// Saved fine-tuned target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFile {
    pub version: u32,
    pub spec: ClassifierSpec,
    pub params: ParamVector,
}

impl TargetFile {
    pub fn new(spec: ClassifierSpec, params: ParamVector) -> Self {
        Self { version: 1, spec, params }
    }
}

/// File names of the experiment directory layout.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const TRAJECTORY: &str = "trajectory.json";
    pub const ROLLOUTS: &str = "rollouts.jsonl";
    pub const STATS: &str = "stats.csv";
    pub const DATASET_PRE: &str = "dataset_pre.jsonl";
    pub const DATASET_POST: &str = "dataset_post.jsonl";
    pub const REPORT: &str = "report.json";
    pub const POOL: &str = "pool.jsonl";
    pub const POLICY: &str = "policy.json";
    pub const INITIAL_POLICY: &str = "policy_initial.json";
    pub const SEEDS: &str = "seeds.jsonl";
    pub const VALIDATION: &str = "validation.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const INFLUENCE: &str = "influence.csv";
    pub const TARGET: &str = "target.json";
    pub const EVAL: &str = "eval.json";
}

/// Writes the full experiment directory for a completed run.
pub fn write_run(dir: &Path, exp: &Experiment, run: &RunArtifacts) -> Result<()> {
    use crate::io::{write_json, write_jsonl};
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(files::CONFIG), &exp.config)?;
    write_json(&dir.join(files::TRAJECTORY), &run.warmup.trajectory)?;
    write_jsonl(&dir.join(files::POOL), &run.warmup.pool)?;
    write_jsonl(&dir.join(files::ROLLOUTS), &run.prompter.rollouts)?;
    write_stats_csv(std::fs::File::create(dir.join(files::STATS))?, &run.prompter.stats)?;
    write_json(&dir.join(files::POLICY), &PolicyFile::new(exp.policy, run.prompter.policy.clone()))?;
    write_jsonl(&dir.join(files::DATASET_PRE), &run.dataset_pre)?;
    write_jsonl(&dir.join(files::DATASET_POST), &run.dataset_post)?;
    write_json(&dir.join(files::REPORT), &run.report)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::env::Provenance;

    fn small() -> ExperimentConfig {
        parse_config_str(
            r#"{
                "env": {"seed_count": 100, "validation_size": 30, "test_size": 120},
                "warmup": {"pool_size": 200},
                "rl": {"updates": 4, "smoothing_window": 2},
                "synthesis": {"size": 60},
                "correlate": {"pool_size": 80, "subset_size": 20, "trials": 4}
            }"#,
        )
        .unwrap()
        .resolve(None)
        .unwrap()
    }

    /// Policy that almost never emits a well-formed rubric.
    fn malformed_policy(exp: &Experiment) -> ParamVector {
        let mut p = exp.initial_policy();
        let (v, l) = (exp.policy.vocab_size, exp.policy.rubric_length);
        let off = p.segment("position").unwrap().offset;
        for a in 0..v / 2 {
            p.values_mut()[off + a * l + 3] = -1e3;
        }
        p
    }

    #[test]
    fn warmup_shape() {
        let mut cfg = small();
        cfg.warmup.fraction = 1.0;
        let exp = Experiment::new(cfg).unwrap();
        let w = exp.warmup().unwrap();
        assert_eq!(w.warmup_size, w.pool.len());
        assert_eq!(w.trajectory.len(), exp.config.warmup.epochs);
        assert_eq!(w.val_losses.len(), exp.config.warmup.epochs + 1);
    }

    #[test]
    fn warmup_reduces_validation_loss() {
        let exp = Experiment::new(ExperimentConfig::default()).unwrap();
        let w = exp.warmup().unwrap();
        assert!(w.val_losses.last().unwrap() < &w.val_losses[0], "{:?}", w.val_losses);
    }

    #[test]
    fn degenerate_pool_is_reported() {
        let mut cfg = small();
        cfg.synthesis.retry_cap = 3;
        let exp = Experiment::new(cfg).unwrap();
        let e = exp.warmup_with_policy(&malformed_policy(&exp), 0).unwrap_err();
        assert!(matches!(e, Error::Degenerate(_)), "{e}");
        let e = exp.synthesize_dataset(&malformed_policy(&exp), 5, "x", 1).unwrap_err();
        assert!(matches!(e, Error::RetryCapExhausted { requested: 5, .. }), "{e}");
    }

    #[test]
    fn zero_updates_keep_initial_policy() {
        let mut cfg = small();
        cfg.rl.updates = 0;
        let exp = Experiment::new(cfg).unwrap();
        let w = exp.warmup().unwrap();
        let out = exp.train_prompter(&w.trajectory).unwrap();
        assert_eq!(out.policy, exp.initial_policy());
        assert!(out.stats.is_empty() && out.rollouts.is_empty());
        let rl = exp.rl_report(&out).unwrap();
        assert_eq!(rl.first_window_mean, None);
        assert_eq!(rl.mean_top_focus, None);
    }

    #[test]
    fn prompter_curves_repeat() {
        let exp = Experiment::new(small()).unwrap();
        let w = exp.warmup().unwrap();
        let a = exp.train_prompter(&w.trajectory).unwrap();
        let b = exp.train_prompter(&w.trajectory).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.rollouts.len(), 4 * 8 * 5);
        assert_eq!(a.visits.values().sum::<usize>(), 4 * 8);
    }

    #[test]
    fn synthesize_hundred() {
        let exp = Experiment::new(small()).unwrap();
        let d = exp.synthesize_dataset(&exp.initial_policy(), 100, "pre", 7).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.iter().all(|x| x.wellformed && exp.env.validity(x).valid));
        assert!(d.iter().all(|x| matches!(x.provenance, Provenance::Synthetic { .. })));
        assert!(exp.synthesize_dataset(&exp.initial_policy(), 0, "pre", 7).is_err());
    }

    #[test]
    fn synthesis_ignores_execution_mode() {
        let mut cfg = small();
        cfg.execution = crate::Execution::Sequential;
        let seq = Experiment::new(cfg.clone()).unwrap();
        cfg.execution = crate::Execution::Parallel;
        let par = Experiment::new(cfg).unwrap();
        let p = seq.initial_policy();
        assert_eq!(
            seq.synthesize_dataset(&p, 40, "a", 3).unwrap(),
            par.synthesize_dataset(&p, 40, "a", 3).unwrap()
        );
    }

    #[test]
    fn greedy_synthesis_uses_argmax_rubric() {
        let mut cfg = small();
        cfg.synthesis.sampling = Sampling::Greedy;
        let exp = Experiment::new(cfg).unwrap();
        let d = exp.synthesize_dataset(&exp.initial_policy(), 10, "g", 1).unwrap();
        for x in &d {
            match &x.provenance {
                Provenance::Synthetic { tokens, .. } => assert_eq!(tokens, &vec![0, 0, 0, 0]),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn sft_repeats_and_empty_is_rejected() {
        let exp = Experiment::new(small()).unwrap();
        let d = exp.synthesize_dataset(&exp.initial_policy(), 50, "pre", 7).unwrap();
        let a = exp.sft_and_eval(&d, 3).unwrap();
        let b = exp.sft_and_eval(&d, 3).unwrap();
        assert_eq!(a.test_accuracy, b.test_accuracy);
        assert_eq!(a.params, b.params);
        assert!(matches!(exp.sft_and_eval(&[], 3), Err(Error::Empty(_))));
    }

    #[test]
    fn uninformative_data_gives_majority_accuracy_at_best() {
        let exp = Experiment::new(small()).unwrap();
        let k = exp.config.env.topic_count;
        let data: Vec<SyntheticExample> = (0..200)
            .map(|i| SyntheticExample {
                id: format!("z{i}"),
                features: vec![0.0; exp.config.env.feature_dim],
                label: i % k,
                wellformed: true,
                provenance: Provenance::Corpus { split: "none".into() },
            })
            .collect();
        let acc = exp.sft_and_eval(&data, 1).unwrap().test_accuracy;
        let mut counts = vec![0usize; k];
        for t in &exp.corpus.test {
            counts[t.label] += 1;
        }
        let majority = *counts.iter().max().unwrap() as f64 / exp.corpus.test.len() as f64;
        assert!(acc <= majority + 1e-12, "acc {acc} majority {majority}");
    }

    #[test]
    fn single_trial_correlation_is_undefined() {
        let exp = Experiment::new(small()).unwrap();
        let w = exp.warmup().unwrap();
        let r = exp.correlate_if_accuracy(&w.pool[..40], &w.trajectory, 10, 1).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert!(r.degenerate && r.pearson_r.is_none());
        assert!(exp.correlate_if_accuracy(&w.pool[..40], &w.trajectory, 10, 0).is_err());
        assert!(exp.correlate_if_accuracy(&w.pool[..40], &w.trajectory, 41, 3).is_err());
    }

    #[test]
    fn identical_pool_correlation_is_degenerate() {
        let exp = Experiment::new(small()).unwrap();
        let w = exp.warmup().unwrap();
        let pool = vec![w.pool[0].clone(); 30];
        let r = exp.correlate_if_accuracy(&pool, &w.trajectory, 10, 5).unwrap();
        assert!(r.degenerate && r.pearson_r.is_none() && r.spearman_rho.is_none());
    }

    #[test]
    fn report_rejects_bad_accuracy() {
        let mut r = MetricsReport::new(small());
        assert!(r.validate().is_ok());
        r.sft = Some(SftReport {
            pre_test_accuracy: 1.2,
            post_test_accuracy: 0.5,
            pre_val_accuracy: 0.5,
            post_val_accuracy: 0.5,
        });
        assert!(r.validate().is_err());
    }

    #[test]
    fn stats_csv_header() {
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "update_idx,mean_reward,mean_if,kl,entropy,clip_frac\n");
    }
}
