//! Group-relative policy optimization of the rubric policy.
//!
//! Rewards combine a validity bit with min–max normalized influence; each
//! group of `G` rollouts from one seed is normalized into advantages, and the
//! policy takes a gradient step on the clipped token-level surrogate with an
//! exact categorical KL penalty to a frozen reference and an entropy bonus.

use serde::{Deserialize, Serialize};

use crate::env::{Env, InvalidReason, SeedDocument, SyntheticExample};
use crate::error::{check_len, contract, Error, Result};
use crate::exec::Execution;
use crate::influence::{minmax_normalize, InfluenceScorer};
use crate::model::{log_softmax, PolicySpec};
use crate::params::ParamVector;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Min–max across every trajectory of an update batch.
    #[default]
    Batch,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoHyper {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub delta: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub group_size: usize,
    pub temperature: f64,
    pub lambda_penalty: f64,
    /// Seed documents sampled per update.
    pub seeds_per_update: usize,
    /// Gradient steps per collected batch; π_old stays at collection time.
    pub inner_epochs: usize,
    pub normalization: NormalizationScope,
}

impl Default for GrpoHyper {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_beta: 0.01,
            delta: 1e-8,
            entropy_coef: 0.01,
            lr: 0.5,
            group_size: 5,
            temperature: 1.5,
            lambda_penalty: 0.1,
            seeds_per_update: 8,
            inner_epochs: 1,
            normalization: NormalizationScope::Batch,
        }
    }
}

impl GrpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps out of range");
        }
        if !(self.kl_beta >= 0.0) {
            return bad("kl_beta out of range");
        }
        if !(self.delta > 0.0) {
            return bad("delta out of range");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef out of range");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr out of range");
        }
        if self.group_size < 2 {
            return bad("group_size out of range");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature out of range");
        }
        if !(self.lambda_penalty > 0.0) {
            return bad("lambda_penalty out of range");
        }
        if self.seeds_per_update == 0 {
            return bad("seeds_per_update out of range");
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs out of range");
        }
        Ok(())
    }
}

/// One sampled rubric and everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed_id: String,
    pub context: Vec<f64>,
    pub tokens: Vec<usize>,
    /// Under the temperature-scaled sampling distribution.
    pub behavior_logprobs: Vec<f64>,
    /// Temperature-1 log-probabilities at collection time (π_old).
    pub old_logprobs: Vec<f64>,
    pub example: SyntheticExample,
    pub valid: bool,
    pub invalid_reason: Option<InvalidReason>,
    /// Only scored for valid examples.
    pub raw_if: Option<f64>,
    pub if_norm: Option<f64>,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub seed_id: String,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Option<Vec<f64>> {
        self.trajectories.iter().map(|t| t.reward).collect()
    }
}

/// `Valid · IF − λ (1 − Valid)`.
pub fn reward(valid: bool, if_norm: f64, lambda: f64) -> Result<f64> {
    if !valid {
        return Ok(-lambda);
    }
    contract((0.0..=1.0).contains(&if_norm), || {
        format!("normalized influence {if_norm} outside [0, 1]")
    })?;
    Ok(if_norm)
}

/// `(R_i − mean) / √(popvar + δ)`.
pub fn advantages(rewards: &[f64], delta: f64) -> Result<Vec<f64>> {
    contract(rewards.len() >= 2, || "a group needs at least two rewards".into())?;
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let scale = (var + delta).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / scale).collect())
}

pub fn importance_ratios(new_logprobs: &[f64], old_logprobs: &[f64]) -> Result<Vec<f64>> {
    check_len("importance ratios", old_logprobs.len(), new_logprobs.len())?;
    Ok(new_logprobs
        .iter()
        .zip(old_logprobs)
        .map(|(n, o)| (n - o).exp())
        .collect())
}

/// `min[r Â, clip(r, 1 − ε, 1 + ε) Â]`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

fn kl_row(p: &[f64], q: &[f64], row: usize) -> Result<f64> {
    let mut kl = 0.0;
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa == 0.0 {
            continue;
        }
        if qa == 0.0 {
            return Err(Error::SupportViolation { row, action: a });
        }
        kl += pa * (pa / qa).ln();
    }
    Ok(kl)
}

/// Mean over rows of the exact categorical `KL(p ‖ q)`.
pub fn kl_term(policy_dists: &[Vec<f64>], ref_dists: &[Vec<f64>]) -> Result<f64> {
    check_len("kl rows", policy_dists.len(), ref_dists.len())?;
    if policy_dists.is_empty() {
        return Err(Error::Empty("kl distributions"));
    }
    let mut total = 0.0;
    for (row, (p, q)) in policy_dists.iter().zip(ref_dists).enumerate() {
        check_len("kl row", p.len(), q.len())?;
        total += kl_row(p, q, row)?;
    }
    Ok(total / policy_dists.len() as f64)
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Loss terms and gradient of the GRPO objective at `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    /// `−surrogate + β KL − c_H H`.
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    /// Mean raw influence over valid trajectories; 0 when none were valid.
    pub mean_if: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub loss: f64,
}

fn check_complete(groups: &[RolloutGroup]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Empty("rollout groups"));
    }
    for g in groups {
        let adv = g.advantages.as_ref().ok_or_else(|| {
            Error::Contract(format!("group {} has no advantages", g.seed_id))
        })?;
        contract(g.trajectories.len() >= 2 && adv.len() == g.trajectories.len(), || {
            format!("group {} is incomplete", g.seed_id)
        })?;
        contract(g.trajectories.iter().all(|t| t.reward.is_some()), || {
            format!("group {} has trajectories without rewards", g.seed_id)
        })?;
    }
    Ok(())
}

/// Evaluates the objective and its gradient.
pub fn objective(
    spec: &PolicySpec,
    params: &ParamVector,
    groups: &[RolloutGroup],
    ref_params: &ParamVector,
    hyper: &GrpoHyper,
) -> Result<ObjectiveEval> {
    check_complete(groups)?;
    let v = spec.vocab_size;
    let n_tokens: usize = groups
        .iter()
        .flat_map(|g| &g.trajectories)
        .map(|t| t.tokens.len())
        .sum();
    let n_groups = groups.len() as f64;

    let mut grad = vec![0.0; params.len()];
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut ent = 0.0;
    let mut clipped = 0usize;

    for g in groups {
        let adv = g.advantages.as_ref().expect("checked");
        let gsize = g.trajectories.len() as f64;
        for (traj, &a) in g.trajectories.iter().zip(adv) {
            let len = traj.tokens.len() as f64;
            let w_surr = 1.0 / (n_groups * gsize * len);
            let new = spec.logprobs(params, &traj.context, &traj.tokens)?;
            let reference = spec.logprobs(ref_params, &traj.context, &traj.tokens)?;
            let ratios = importance_ratios(&new.logprobs, &traj.old_logprobs)?;
            let mut dlogits = Vec::with_capacity(traj.tokens.len());
            for (t, &tok) in traj.tokens.iter().enumerate() {
                let p = &new.dists[t];
                let q = &reference.dists[t];
                let r = ratios[t];
                let unclipped = r * a;
                let clip_val = r.clamp(1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * a;
                surrogate += w_surr * unclipped.min(clip_val);
                let surrogate_active = unclipped <= clip_val;
                if !surrogate_active {
                    clipped += 1;
                }
                let kl_t = kl_row(p, q, t)?;
                let h_t = entropy(p);
                kl += kl_t / n_tokens as f64;
                ent += h_t / n_tokens as f64;

                let lp = log_softmax(&spec.logits_at(params, &traj.context, t, t.checked_sub(1).map(|s| traj.tokens[s])));
                let lq: Vec<f64> = q.iter().map(|x| x.ln()).collect();
                let mut gz = vec![0.0; v];
                for k in 0..v {
                    let onehot = if k == tok { 1.0 } else { 0.0 };
                    let mut d = 0.0;
                    if surrogate_active {
                        d -= w_surr * a * r * (onehot - p[k]);
                    }
                    if p[k] > 0.0 {
                        d += hyper.kl_beta / n_tokens as f64 * p[k] * (lp[k] - lq[k] - kl_t);
                        d += hyper.entropy_coef / n_tokens as f64 * p[k] * (lp[k] + h_t);
                    }
                    gz[k] = d;
                }
                dlogits.push(gz);
            }
            spec.accumulate_logit_grads(params, &traj.context, &traj.tokens, &dlogits, 1.0, &mut grad);
        }
    }
    Ok(ObjectiveEval {
        loss: -surrogate + hyper.kl_beta * kl - hyper.entropy_coef * ent,
        surrogate,
        kl,
        entropy: ent,
        clip_frac: clipped as f64 / n_tokens as f64,
        grad,
    })
}

/// One (or `inner_epochs`) gradient step(s) on the policy.
pub fn grpo_update(
    spec: &PolicySpec,
    params: &ParamVector,
    groups: &[RolloutGroup],
    ref_params: &ParamVector,
    hyper: &GrpoHyper,
) -> Result<(ParamVector, UpdateStats)> {
    check_complete(groups)?;
    let mut current = params.clone();
    let mut first: Option<ObjectiveEval> = None;
    for _ in 0..hyper.inner_epochs {
        let eval = objective(spec, &current, groups, ref_params, hyper)?;
        let values: Vec<f64> = current
            .values()
            .iter()
            .zip(&eval.grad)
            .map(|(p, g)| p - hyper.lr * g)
            .collect();
        current = current.with_values(values)?;
        first.get_or_insert(eval);
    }
    let eval = first.expect("inner_epochs >= 1");
    let all: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
    let mean_reward = all.iter().map(|t| t.reward.expect("checked")).sum::<f64>() / all.len() as f64;
    let ifs: Vec<f64> = all.iter().filter_map(|t| t.raw_if).collect();
    let mean_if = if ifs.is_empty() {
        0.0
    } else {
        ifs.iter().sum::<f64>() / ifs.len() as f64
    };
    Ok((
        current,
        UpdateStats {
            mean_reward,
            mean_if,
            kl: eval.kl,
            entropy: eval.entropy,
            clip_frac: eval.clip_frac,
            loss: eval.loss,
        },
    ))
}

/// Normalizes raw influence, fills rewards, then per-group advantages.
pub fn fill_rewards(groups: &mut [RolloutGroup], hyper: &GrpoHyper) -> Result<()> {
    let normalize = |trajs: &mut [&mut Trajectory]| -> Result<()> {
        let raw: Vec<f64> = trajs.iter().filter_map(|t| t.raw_if).collect();
        if raw.is_empty() {
            return Ok(());
        }
        let mut norm = minmax_normalize(&raw)?.into_iter();
        for t in trajs.iter_mut().filter(|t| t.raw_if.is_some()) {
            t.if_norm = norm.next();
        }
        Ok(())
    };
    match hyper.normalization {
        NormalizationScope::Batch => {
            let mut all: Vec<&mut Trajectory> =
                groups.iter_mut().flat_map(|g| g.trajectories.iter_mut()).collect();
            normalize(&mut all)?;
        }
        NormalizationScope::Group => {
            for g in groups.iter_mut() {
                let mut all: Vec<&mut Trajectory> = g.trajectories.iter_mut().collect();
                normalize(&mut all)?;
            }
        }
    }
    for g in groups.iter_mut() {
        for t in g.trajectories.iter_mut() {
            t.reward = Some(reward(t.valid, t.if_norm.unwrap_or(0.0), hyper.lambda_penalty)?);
        }
        let rewards = g.rewards().expect("just filled");
        g.advantages = Some(advantages(&rewards, hyper.delta)?);
    }
    Ok(())
}

/// Shared inputs for rollout collection.
pub struct RolloutContext<'a> {
    pub spec: &'a PolicySpec,
    pub env: &'a Env,
    pub scorer: &'a InfluenceScorer,
    pub hyper: &'a GrpoHyper,
    pub exec: Execution,
}

impl RolloutContext<'_> {
    fn sample_group(
        &self,
        params: &ParamVector,
        seed_doc: &SeedDocument,
        stream_seed: u64,
        label: &str,
    ) -> Result<RolloutGroup> {
        let mut rng = rng::stream(stream_seed, &[]);
        let mut trajectories = Vec::with_capacity(self.hyper.group_size);
        for j in 0..self.hyper.group_size {
            let s = self
                .spec
                .sample(params, &seed_doc.context, self.hyper.temperature, &mut rng)?;
            let old = self.spec.logprobs(params, &seed_doc.context, &s.tokens)?;
            let example = self
                .env
                .generate(seed_doc, &s.tokens, format!("{label}-{j}"), &mut rng)?;
            let validity = self.env.validity(&example);
            let raw_if = if validity.valid {
                Some(self.scorer.score(&example.labeled())?)
            } else {
                None
            };
            trajectories.push(Trajectory {
                seed_id: seed_doc.id.clone(),
                context: seed_doc.context.clone(),
                tokens: s.tokens,
                behavior_logprobs: s.logprobs,
                old_logprobs: old.logprobs,
                example,
                valid: validity.valid,
                invalid_reason: validity.reason,
                raw_if,
                if_norm: None,
                reward: None,
            });
        }
        Ok(RolloutGroup {
            seed_id: seed_doc.id.clone(),
            trajectories,
            advantages: None,
        })
    }

    /// Collects one group per seed (each on its own substream of `seed`),
    /// then normalizes influence and fills rewards and advantages.
    pub fn collect_batch(
        &self,
        params: &ParamVector,
        seeds: &[&SeedDocument],
        seed: u64,
        update_idx: usize,
    ) -> Result<Vec<RolloutGroup>> {
        let mut groups = self.exec.try_map_indexed(seeds, |i, s| {
            self.sample_group(
                params,
                s,
                rng::derive(seed, &[update_idx as u64, i as u64]),
                &format!("u{update_idx:04}-g{i:02}"),
            )
        })?;
        fill_rewards(&mut groups, self.hyper)?;
        Ok(groups)
    }

    /// A single group normalized on its own.
    pub fn collect_group(
        &self,
        params: &ParamVector,
        seed_doc: &SeedDocument,
        seed: u64,
    ) -> Result<RolloutGroup> {
        Ok(self
            .collect_batch(params, &[seed_doc], seed, 0)?
            .pop()
            .expect("one group"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_cases() {
        assert_eq!(reward(true, 0.7, 0.1).unwrap(), 0.7);
        assert_eq!(reward(false, 0.7, 0.1).unwrap(), -0.1);
        assert_eq!(reward(true, 0.0, 0.1).unwrap(), 0.0);
        assert!(reward(true, 1.5, 0.1).is_err());
    }

    #[test]
    fn advantage_cases() {
        let a = advantages(&[1.0, 0.0], 1e-300).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] + 1.0).abs() < 1e-12);
        assert_eq!(advantages(&[0.3; 5], 1e-8).unwrap(), vec![0.0; 5]);
        let b = advantages(&[1.0, 2.0, 3.0], 1e-8).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((b[0] + 1.0 / s).abs() < 1e-3 && b[1].abs() < 1e-12 && (b[2] - 1.0 / s).abs() < 1e-3);
        assert!((b[2] - 1.2247).abs() < 1e-3);
        assert!(advantages(&[1.0], 1e-8).is_err());
    }

    #[test]
    fn ratio_cases() {
        assert_eq!(importance_ratios(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), vec![1.0, 1.0]);
        let r = importance_ratios(&[-1.0 + 2f64.ln()], &[-1.0]).unwrap();
        assert!((r[0] - 2.0).abs() < 1e-12);
        assert!(importance_ratios(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn clip_cases() {
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_term(1.0, 0.37, 0.1), 0.37);
    }

    #[test]
    fn kl_cases() {
        let p = vec![vec![0.2, 0.8], vec![0.5, 0.5]];
        assert_eq!(kl_term(&p, &p).unwrap(), 0.0);
        let v = kl_term(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            kl_term(&[vec![0.5, 0.5]], &[vec![1.0, 0.0]]),
            Err(Error::SupportViolation { row: 0, action: 1 })
        ));
    }

    #[test]
    fn hyper_validation() {
        assert!(GrpoHyper::default().validate().is_ok());
        let e = GrpoHyper { clip_eps: 1.5, ..GrpoHyper::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("clip_eps out of range"));
        assert!(GrpoHyper { group_size: 1, ..GrpoHyper::default() }.validate().is_err());
        assert!(GrpoHyper { delta: 0.0, ..GrpoHyper::default() }.validate().is_err());
    }
}
