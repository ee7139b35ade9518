//! Autoregressive rubric policy.
//!
//! Logits at position `t` are an affine map of
//! `[context ⊕ onehot(t) ⊕ onehot(previous token or BOS)]`.
//! Segments: `context` (V × c), `position` (V × L), `prev_token` (V × (V+1)),
//! `bias` (V). Index `V` of the previous-token embedding is BOS.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_softmax, softmax};
use crate::error::{check_len, contract, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub vocab_size: usize,
    pub rubric_length: usize,
    pub context_dim: usize,
}

/// Per-token log-probabilities of a sequence plus the full categorical
/// distribution at every position.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyScores {
    pub logprobs: Vec<f64>,
    pub dists: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub tokens: Vec<usize>,
    /// Log-probabilities under the temperature-scaled behavior distribution.
    pub logprobs: Vec<f64>,
}

impl PolicySpec {
    pub fn new(vocab_size: usize, rubric_length: usize, context_dim: usize) -> Result<Self> {
        let spec = Self {
            vocab_size,
            rubric_length,
            context_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        contract(self.vocab_size >= 2, || "policy vocab_size must be >= 2".into())?;
        contract(self.rubric_length >= 1, || "policy rubric_length must be >= 1".into())
    }

    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        let (v, l, c) = (self.vocab_size, self.rubric_length, self.context_dim);
        vec![
            ("context", v * c),
            ("position", v * l),
            ("prev_token", v * (v + 1)),
            ("bias", v),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, n)| n).sum()
    }

    /// All-zero parameters: the uniform policy.
    pub fn init_params(&self) -> ParamVector {
        ParamVector::zeros(&self.layout())
    }

    fn check(&self, params: &ParamVector, context: &[f64]) -> Result<()> {
        check_len("policy params", self.param_count(), params.len())?;
        check_len("policy context", self.context_dim, context.len())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        check_len("rubric tokens", self.rubric_length, tokens.len())?;
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(t) => Err(crate::Error::Contract(format!(
                "token {t} outside vocabulary of size {}",
                self.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Unscaled logits at position `t` given the previous token (`None` = BOS).
    pub fn logits_at(
        &self,
        params: &ParamVector,
        context: &[f64],
        t: usize,
        prev: Option<usize>,
    ) -> Vec<f64> {
        let (v, l, c) = (self.vocab_size, self.rubric_length, self.context_dim);
        let vals = params.values();
        let off = Offsets::of(params);
        let prev = prev.unwrap_or(v);
        (0..v)
            .map(|a| {
                let w = &vals[off.context + a * c..off.context + (a + 1) * c];
                super::dot(w, context)
                    + vals[off.position + a * l + t]
                    + vals[off.prev + a * (v + 1) + prev]
                    + vals[off.bias + a]
            })
            .collect()
    }

    /// Temperature-1 scores of `tokens`.
    pub fn logprobs(
        &self,
        params: &ParamVector,
        context: &[f64],
        tokens: &[usize],
    ) -> Result<PolicyScores> {
        self.check(params, context)?;
        self.check_tokens(tokens)?;
        let mut logprobs = Vec::with_capacity(tokens.len());
        let mut dists = Vec::with_capacity(tokens.len());
        let mut prev = None;
        for (t, &tok) in tokens.iter().enumerate() {
            let lp = log_softmax(&self.logits_at(params, context, t, prev));
            logprobs.push(lp[tok]);
            dists.push(lp.iter().map(|x| x.exp()).collect());
            prev = Some(tok);
        }
        Ok(PolicyScores { logprobs, dists })
    }

    /// Draws a rubric autoregressively from `softmax(logits / temperature)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        context: &[f64],
        temperature: f64,
        rng: &mut R,
    ) -> Result<PolicySample> {
        self.check(params, context)?;
        contract(temperature > 0.0 && temperature.is_finite(), || {
            format!("temperature must be positive, got {temperature}")
        })?;
        let mut tokens = Vec::with_capacity(self.rubric_length);
        let mut logprobs = Vec::with_capacity(self.rubric_length);
        let mut prev = None;
        for t in 0..self.rubric_length {
            let scaled: Vec<f64> = self
                .logits_at(params, context, t, prev)
                .into_iter()
                .map(|z| z / temperature)
                .collect();
            let lp = log_softmax(&scaled);
            let tok = draw_categorical(&lp, rng.random::<f64>());
            tokens.push(tok);
            logprobs.push(lp[tok]);
            prev = Some(tok);
        }
        Ok(PolicySample { tokens, logprobs })
    }

    /// Gradient of `Σ_t log π(token_t | prefix)` at temperature 1.
    pub fn grad_logprob(
        &self,
        params: &ParamVector,
        context: &[f64],
        tokens: &[usize],
    ) -> Result<Vec<f64>> {
        let scores = self.logprobs(params, context, tokens)?;
        let dlogits: Vec<Vec<f64>> = scores
            .dists
            .iter()
            .zip(tokens)
            .map(|(p, &tok)| {
                let mut g: Vec<f64> = p.iter().map(|x| -x).collect();
                g[tok] += 1.0;
                g
            })
            .collect();
        let mut out = vec![0.0; params.len()];
        self.accumulate_logit_grads(params, context, tokens, &dlogits, 1.0, &mut out);
        Ok(out)
    }

    /// Chains per-position logit gradients through the affine map into `out`,
    /// scaled by `weight`. `tokens` supplies the previous-token inputs.
    pub fn accumulate_logit_grads(
        &self,
        params: &ParamVector,
        context: &[f64],
        tokens: &[usize],
        dlogits: &[Vec<f64>],
        weight: f64,
        out: &mut [f64],
    ) {
        let (v, l, c) = (self.vocab_size, self.rubric_length, self.context_dim);
        let off = Offsets::of(params);
        for (t, gz) in dlogits.iter().enumerate() {
            let prev = if t == 0 { v } else { tokens[t - 1] };
            for a in 0..v {
                let g = weight * gz[a];
                if g == 0.0 {
                    continue;
                }
                for (j, x) in context.iter().enumerate() {
                    out[off.context + a * c + j] += g * x;
                }
                out[off.position + a * l + t] += g;
                out[off.prev + a * (v + 1) + prev] += g;
                out[off.bias + a] += g;
            }
        }
    }

    /// Temperature-1 distribution at every position of `tokens`.
    pub fn dists(
        &self,
        params: &ParamVector,
        context: &[f64],
        tokens: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self.logprobs(params, context, tokens)?.dists)
    }

    /// Distribution of the first token (no prefix).
    pub fn first_token_dist(&self, params: &ParamVector, context: &[f64]) -> Result<Vec<f64>> {
        self.check(params, context)?;
        Ok(softmax(&self.logits_at(params, context, 0, None)))
    }
}

struct Offsets {
    context: usize,
    position: usize,
    prev: usize,
    bias: usize,
}

impl Offsets {
    fn of(params: &ParamVector) -> Self {
        let o = |n: &str| params.segment(n).map(|s| s.offset).expect("policy layout");
        Self {
            context: o("context"),
            position: o("position"),
            prev: o("prev_token"),
            bias: o("bias"),
        }
    }
}

/// Inverse-CDF draw from log-probabilities with a uniform `u ∈ [0, 1)`.
fn draw_categorical(logprobs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, lp) in logprobs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}
