//! First-order trajectory influence.
//!
//! Scores follow the "positive = helpful" convention: a positive score
//! predicts that training on the candidate lowers validation loss.
//!
//! * per-step: `η ⟨∇ℓ(z), ∇ℓ(z′)⟩`
//! * SGD trajectory: `Σ_i η̄_i ⟨∇ℓ(z′; θ_i), ∇ℓ(z; θ_i)⟩`
//! * Adam trajectory: `Σ_i η̄_i cos(∇ℓ(z′; θ_i), Γ(z, θ_i))`, where `Γ` is the
//!   direction Adam would take from the checkpoint's snapshotted moments.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, contract, Error, Result};
use crate::exec::Execution;
use crate::model::{dot, norm, ClassifierSpec, LabeledExample};
use crate::optimizer::{adam_direction, adam_moments, AdamConfig, AdamState, Checkpoint, TrainingTrajectory};

/// Norm below which a vector is treated as zero by [`cosine`].
pub const DEGENERATE_NORM: f64 = 1e-30;
/// Range below which [`minmax_normalize`] maps everything to 0.5.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sgd,
    #[default]
    Adam,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::Adam => "adam",
        }
    }
}

/// How per-pair scores are combined over a validation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    Max,
}

impl Aggregation {
    fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Aggregation::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Aggregation::Sum => xs.iter().sum(),
            Aggregation::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("cosine", a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Ok(0.0);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Predicted validation-loss decrease from one SGD step on the training example.
pub fn per_step_influence(train_grad: &[f64], val_grad: &[f64], lr: f64) -> Result<f64> {
    check_len("per_step_influence", train_grad.len(), val_grad.len())?;
    contract(lr > 0.0, || format!("learning rate must be positive, got {lr}"))?;
    Ok(lr * dot(train_grad, val_grad))
}

pub fn influence_sgd(
    spec: &ClassifierSpec,
    z: &LabeledExample,
    z_val: &LabeledExample,
    trajectory: &TrainingTrajectory,
) -> Result<f64> {
    let mut total = 0.0;
    for c in trajectory.checkpoints() {
        let g = spec.grad(&c.params, z)?;
        let gv = spec.grad(&c.params, z_val)?;
        total += c.avg_lr * dot(&gv, &g);
    }
    Ok(total)
}

fn require_adam(c: &Checkpoint) -> Result<&AdamState> {
    c.adam_state.as_ref().ok_or_else(|| {
        Error::Contract(format!(
            "checkpoint {} carries no Adam state; Adam influence needs moments",
            c.epoch
        ))
    })
}

pub fn influence_adam(
    spec: &ClassifierSpec,
    z: &LabeledExample,
    z_val: &LabeledExample,
    trajectory: &TrainingTrajectory,
    adam: &AdamConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for c in trajectory.checkpoints() {
        let state = require_adam(c)?;
        let gamma = adam_direction(&spec.grad(&c.params, z)?, state, adam)?;
        let gv = spec.grad(&c.params, z_val)?;
        total += c.avg_lr * cosine(&gv, &gamma)?;
    }
    Ok(total)
}

/// Aggregated influence of `z` against a validation set.
#[allow(clippy::too_many_arguments)]
pub fn influence_vs_valset(
    spec: &ClassifierSpec,
    z: &LabeledExample,
    valset: &[LabeledExample],
    trajectory: &TrainingTrajectory,
    variant: Variant,
    adam: &AdamConfig,
    aggregation: Aggregation,
) -> Result<f64> {
    InfluenceScorer::new(spec, trajectory, valset, variant, *adam, aggregation)?.score(z)
}

/// Influence scoring against a fixed trajectory and validation set.
///
/// Validation gradients at every checkpoint are computed once up front, so
/// scoring a candidate costs one gradient per checkpoint.
#[derive(Debug, Clone)]
pub struct InfluenceScorer {
    spec: ClassifierSpec,
    trajectory: TrainingTrajectory,
    variant: Variant,
    adam: AdamConfig,
    aggregation: Aggregation,
    // [checkpoint][val example]
    val_grads: Vec<Vec<Vec<f64>>>,
    val_norms: Vec<Vec<f64>>,
}

impl InfluenceScorer {
    pub fn new(
        spec: &ClassifierSpec,
        trajectory: &TrainingTrajectory,
        valset: &[LabeledExample],
        variant: Variant,
        adam: AdamConfig,
        aggregation: Aggregation,
    ) -> Result<Self> {
        if valset.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let mut val_grads = Vec::with_capacity(trajectory.len());
        let mut val_norms = Vec::with_capacity(trajectory.len());
        for c in trajectory.checkpoints() {
            if variant == Variant::Adam {
                require_adam(c)?;
            }
            let grads = valset
                .iter()
                .map(|v| spec.grad(&c.params, v))
                .collect::<Result<Vec<_>>>()?;
            val_norms.push(grads.iter().map(|g| norm(g)).collect());
            val_grads.push(grads);
        }
        Ok(Self {
            spec: *spec,
            trajectory: trajectory.clone(),
            variant,
            adam,
            aggregation,
            val_grads,
            val_norms,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn trajectory(&self) -> &TrainingTrajectory {
        &self.trajectory
    }

    /// Per-pair scores of `z` against every validation example.
    pub fn pair_scores(&self, z: &LabeledExample) -> Result<Vec<f64>> {
        let nval = self.val_grads[0].len();
        let mut scores = vec![0.0; nval];
        for (ci, c) in self.trajectory.checkpoints().iter().enumerate() {
            let g = self.spec.grad(&c.params, z)?;
            match self.variant {
                Variant::Sgd => {
                    for (s, gv) in scores.iter_mut().zip(&self.val_grads[ci]) {
                        *s += c.avg_lr * dot(gv, &g);
                    }
                }
                Variant::Adam => {
                    let gamma = adam_direction(&g, require_adam(c)?, &self.adam)?;
                    let ng = norm(&gamma);
                    for (j, s) in scores.iter_mut().enumerate() {
                        let nv = self.val_norms[ci][j];
                        if ng < DEGENERATE_NORM || nv < DEGENERATE_NORM {
                            continue;
                        }
                        *s += c.avg_lr * dot(&self.val_grads[ci][j], &gamma) / (ng * nv);
                    }
                }
            }
        }
        Ok(scores)
    }

    pub fn score(&self, z: &LabeledExample) -> Result<f64> {
        Ok(self.aggregation.apply(&self.pair_scores(z)?))
    }

    pub fn score_all(&self, exec: Execution, pool: &[LabeledExample]) -> Result<Vec<f64>> {
        exec.try_map(pool, |z| self.score(z))
    }
}

/// Affine rescale to [0, 1]; a range below [`DEGENERATE_RANGE`] maps to 0.5.
pub fn minmax_normalize(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range < DEGENERATE_RANGE {
        return Ok(vec![0.5; scores.len()]);
    }
    Ok(scores
        .iter()
        .map(|s| ((s - lo) / range).clamp(0.0, 1.0))
        .collect())
}

/// Ground-truth helpfulness of `z` at a checkpoint.
///
/// Continues Adam from the snapshotted moments for `step_count` updates on
/// `z` alone and compares the mean validation loss against the same number of
/// zero-gradient updates from the same state. Positive means `z` lowered the
/// validation loss. When the moments are zero the baseline is the checkpoint
/// itself, i.e. loss before minus loss after.
pub fn brute_force_utility(
    spec: &ClassifierSpec,
    z: &LabeledExample,
    checkpoint: &Checkpoint,
    valset: &[LabeledExample],
    step_count: usize,
    adam: &AdamConfig,
) -> Result<f64> {
    contract(step_count >= 1, || "step_count must be >= 1".into())?;
    let state0 = require_adam(checkpoint)?;
    let run = |use_example: bool| -> Result<f64> {
        let mut values = checkpoint.params.values().to_vec();
        let mut state = state0.clone();
        let mut params = checkpoint.params.clone();
        let zeros = vec![0.0; values.len()];
        for _ in 0..step_count {
            let g = if use_example {
                spec.grad(&params, z)?
            } else {
                zeros.clone()
            };
            let mo = adam_moments(&g, &state, adam)?;
            for i in 0..values.len() {
                values[i] -= adam.learning_rate * mo.m_hat[i] / (mo.v_hat[i].sqrt() + adam.eps_adam);
            }
            state = AdamState {
                m: mo.m,
                v: mo.v,
                step: state.step + 1,
            };
            params = params.with_values(values.clone())?;
        }
        spec.mean_loss(&params, valset)
    };
    let baseline = run(false)?;
    let trained = run(true)?;
    Ok(baseline - trained)
}

/// Raw and (optionally) min–max normalized influence of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub candidate_id: String,
    pub raw_score: f64,
    pub normalized_score: Option<f64>,
}

/// Pairs ids with raw scores and fills normalized scores across the batch.
pub fn records(ids: &[String], raw: &[f64]) -> Result<Vec<InfluenceRecord>> {
    check_len("influence records", ids.len(), raw.len())?;
    let norm = minmax_normalize(raw)?;
    Ok(ids
        .iter()
        .zip(raw.iter().zip(norm))
        .map(|(id, (&r, n))| InfluenceRecord {
            candidate_id: id.clone(),
            raw_score: r,
            normalized_score: Some(n),
        })
        .collect())
}

/// Writes `candidate_id,raw_score,normalized_score,variant,trajectory_id`.
pub fn write_records_csv<W: Write>(
    out: W,
    records: &[InfluenceRecord],
    variant: Variant,
    trajectory_id: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["candidate_id", "raw_score", "normalized_score", "variant", "trajectory_id"])?;
    for r in records {
        w.write_record([
            r.candidate_id.clone(),
            r.raw_score.to_string(),
            r.normalized_score.map(|n| n.to_string()).unwrap_or_default(),
            variant.as_str().to_string(),
            trajectory_id.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
