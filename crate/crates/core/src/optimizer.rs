//! SGD and Adam with exposed moment statistics, per-epoch checkpointing, and
//! the hypothetical Adam update direction used by trajectory influence.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, contract, Error, Result};
use crate::model::{ClassifierSpec, LabeledExample};
use crate::params::ParamVector;

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::eps")]
    pub eps_adam: f64,
    /// Base learning rate; SGD uses it too.
    pub learning_rate: f64,
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            eps_adam: defaults::eps(),
            learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::Config("beta1 out of range".into()));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta2 out of range".into()));
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::Config("eps_adam out of range".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate out of range".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Bias-corrected moments after one hypothetical update with `grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
}

fn bias_power(beta: f64, step: u64) -> f64 {
    match i32::try_from(step) {
        Ok(k) => beta.powi(k),
        Err(_) => 0.0,
    }
}

/// Applies one moment update of `grad` onto `state` without mutating it.
pub fn adam_moments(grad: &[f64], state: &AdamState, config: &AdamConfig) -> Result<AdamMoments> {
    check_len("adam m", grad.len(), state.m.len())?;
    check_len("adam v", grad.len(), state.v.len())?;
    let (b1, b2) = (config.beta1, config.beta2);
    let next = state.step + 1;
    let c1 = 1.0 - bias_power(b1, next);
    let c2 = 1.0 - bias_power(b2, next);
    let n = grad.len();
    let mut out = AdamMoments {
        m: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        m_hat: Vec::with_capacity(n),
        v_hat: Vec::with_capacity(n),
    };
    for i in 0..n {
        let g = grad[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        out.m.push(m);
        out.v.push(v);
        out.m_hat.push(m / c1);
        out.v_hat.push(v / c2);
    }
    Ok(out)
}

/// The direction `m̂ / (√v̂ + ε)` Adam would step along if `grad` were applied
/// to `state` next. Neither argument is modified.
pub fn adam_direction(grad: &[f64], state: &AdamState, config: &AdamConfig) -> Result<Vec<f64>> {
    let mo = adam_moments(grad, state, config)?;
    Ok(mo
        .m_hat
        .iter()
        .zip(&mo.v_hat)
        .map(|(m, v)| m / (v.sqrt() + config.eps_adam))
        .collect())
}

/// `params − lr · grad`.
pub fn sgd_step(params: &ParamVector, grad: &[f64], lr: f64) -> Result<ParamVector> {
    check_len("sgd grad", params.len(), grad.len())?;
    contract(lr > 0.0, || format!("learning rate must be positive, got {lr}"))?;
    let values = params
        .values()
        .iter()
        .zip(grad)
        .map(|(p, g)| p - lr * g)
        .collect();
    params.with_values(values)
}

pub fn adam_step(
    params: &ParamVector,
    grad: &[f64],
    state: &AdamState,
    config: &AdamConfig,
) -> Result<(ParamVector, AdamState)> {
    check_len("adam grad", params.len(), grad.len())?;
    let mo = adam_moments(grad, state, config)?;
    let values = params
        .values()
        .iter()
        .zip(mo.m_hat.iter().zip(&mo.v_hat))
        .map(|(p, (m, v))| p - config.learning_rate * m / (v.sqrt() + config.eps_adam))
        .collect();
    Ok((
        params.with_values(values)?,
        AdamState {
            m: mo.m,
            v: mo.v,
            step: state.step + 1,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from the base rate to `final_fraction` of it over the run.
    LinearDecay { final_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub adam: AdamConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// 1 gives exact per-example updates; larger values use the batch-mean gradient.
    #[serde(default = "one")]
    pub batch_size: usize,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            adam: AdamConfig::with_lr(lr),
            schedule: LrSchedule::Constant,
            batch_size: 1,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let LrSchedule::LinearDecay { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) || final_fraction == 0.0 {
                return Err(Error::Config("final_fraction out of range".into()));
            }
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let base = self.adam.learning_rate;
        match self.schedule {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay { final_fraction } => {
                let frac = if total <= 1 {
                    0.0
                } else {
                    step as f64 / (total - 1) as f64
                };
                base * (1.0 - (1.0 - final_fraction) * frac)
            }
        }
    }
}

/// Parameters and optimizer state after epoch `epoch` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamVector,
    /// Present for Adam runs.
    pub adam_state: Option<AdamState>,
    /// Mean learning rate over the epoch's updates.
    pub avg_lr: f64,
    /// Updates applied since the start of training.
    pub step: u64,
}

impl Checkpoint {
    fn validate(&self) -> Result<()> {
        contract(self.avg_lr > 0.0 && self.avg_lr.is_finite(), || {
            format!("checkpoint {} has non-positive avg_lr", self.epoch)
        })?;
        if let Some(s) = &self.adam_state {
            check_len("checkpoint m", self.params.len(), s.m.len())?;
            check_len("checkpoint v", self.params.len(), s.v.len())?;
            contract(s.v.iter().all(|&x| x >= 0.0), || {
                format!("checkpoint {} has negative second moment", self.epoch)
            })?;
        }
        Ok(())
    }
}

/// Ordered, non-empty checkpoint sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrajectory {
    checkpoints: Vec<Checkpoint>,
}

impl TrainingTrajectory {
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self> {
        if checkpoints.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        for c in &checkpoints {
            c.validate()?;
        }
        for w in checkpoints.windows(2) {
            contract(w[0].epoch < w[1].epoch, || {
                "checkpoint epochs must be strictly increasing".to_string()
            })?;
            contract(w[0].params.same_layout(&w[1].params), || {
                "checkpoint layouts differ".to_string()
            })?;
        }
        Ok(Self { checkpoints })
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("non-empty")
    }

    pub fn total_lr(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.avg_lr).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Hex SHA-256 of the serialized trajectory; stable identifier for reports.
    pub fn id(&self) -> String {
        let text = serde_json::to_string(self).expect("trajectory serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochRepr {
    i: usize,
    avg_lr: f64,
    params: ParamVector,
    m: Option<Vec<f64>>,
    v: Option<Vec<f64>>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRepr {
    version: u32,
    epochs: Vec<EpochRepr>,
}

impl Serialize for TrainingTrajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TrajectoryRepr {
            version: TRAJECTORY_FORMAT_VERSION,
            epochs: self
                .checkpoints
                .iter()
                .map(|c| EpochRepr {
                    i: c.epoch,
                    avg_lr: c.avg_lr,
                    params: c.params.clone(),
                    m: c.adam_state.as_ref().map(|a| a.m.clone()),
                    v: c.adam_state.as_ref().map(|a| a.v.clone()),
                    step: c.step,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainingTrajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = TrajectoryRepr::deserialize(d)?;
        if repr.version != TRAJECTORY_FORMAT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported trajectory version {}",
                repr.version
            )));
        }
        let checkpoints = repr
            .epochs
            .into_iter()
            .map(|e| {
                let adam_state = match (e.m, e.v) {
                    (Some(m), Some(v)) => Some(AdamState { m, v, step: e.step }),
                    (None, None) => None,
                    _ => return Err(D::Error::custom("m and v must both be present or absent")),
                };
                Ok(Checkpoint {
                    epoch: e.i,
                    params: e.params,
                    adam_state,
                    avg_lr: e.avg_lr,
                    step: e.step,
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        TrainingTrajectory::new(checkpoints).map_err(D::Error::custom)
    }
}

/// Trains from `params0` for `epochs` passes over a shuffled `dataset`,
/// checkpointing after each epoch. Adam starts from zero moments.
pub fn train_epochs<R: Rng + ?Sized>(
    spec: &ClassifierSpec,
    params0: &ParamVector,
    dataset: &[LabeledExample],
    config: &TrainConfig,
    epochs: usize,
    rng: &mut R,
) -> Result<TrainingTrajectory> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    contract(epochs >= 1, || "epochs must be >= 1".into())?;
    config.validate()?;
    check_len("initial params", spec.param_count(), params0.len())?;

    let n = params0.len();
    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * epochs;

    let mut values = params0.values().to_vec();
    let mut state = AdamState::zeros(n);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut checkpoints = Vec::with_capacity(epochs);
    let mut params = params0.clone();
    let mut grad = vec![0.0; n];

    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut lr_sum = 0.0;
        let mut lr_first: Option<f64> = None;
        let mut lr_constant = true;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            params = params.with_values(values.clone())?;
            for &idx in batch {
                let g = spec.grad(&params, &dataset[idx])?;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi / batch.len() as f64;
                }
            }
            let lr = config.lr_at(step, total_steps);
            lr_sum += lr;
            lr_constant &= *lr_first.get_or_insert(lr) == lr;
            match config.optimizer {
                OptimizerKind::Sgd => {
                    for (p, g) in values.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let cfg = AdamConfig {
                        learning_rate: lr,
                        ..config.adam
                    };
                    let mo = adam_moments(&grad, &state, &cfg)?;
                    for i in 0..n {
                        values[i] -= lr * mo.m_hat[i] / (mo.v_hat[i].sqrt() + cfg.eps_adam);
                    }
                    state = AdamState {
                        m: mo.m,
                        v: mo.v,
                        step: state.step + 1,
                    };
                }
            }
            step += 1;
        }
        params = params.with_values(values.clone())?;
        checkpoints.push(Checkpoint {
            epoch,
            params: params.clone(),
            adam_state: (config.optimizer == OptimizerKind::Adam).then(|| state.clone()),
            avg_lr: match lr_first {
                Some(lr) if lr_constant => lr,
                _ => lr_sum / batches_per_epoch as f64,
            },
            step: step as u64,
        });
    }
    TrainingTrajectory::new(checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar(v: f64) -> ParamVector {
        let mut p = ParamVector::zeros(&[("x", 1)]);
        p.values_mut()[0] = v;
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = ParamVector::zeros(&[("x", 2)]);
        p.values_mut().copy_from_slice(&[1.0, 1.0]);
        let q = sgd_step(&p, &[1.0, -1.0], 0.5).unwrap();
        assert_eq!(q.values(), &[0.5, 1.5]);
        assert_eq!(sgd_step(&p, &[0.0, 0.0], 0.5).unwrap(), p);
        let two = sgd_step(&sgd_step(&p, &[0.2, 0.4], 0.1).unwrap(), &[0.2, 0.4], 0.1).unwrap();
        assert!((two.values()[0] - (1.0 - 0.1 * 0.4)).abs() < 1e-15);
        assert!(sgd_step(&p, &[1.0], 0.5).is_err());
        assert!(sgd_step(&p, &[1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn adam_first_step_hand_values() {
        let cfg = AdamConfig::with_lr(0.1);
        let s0 = AdamState::zeros(1);
        let mo = adam_moments(&[1.0], &s0, &cfg).unwrap();
        assert!((mo.m[0] - 0.1).abs() < 1e-15);
        assert!((mo.v[0] - 0.001).abs() < 1e-15);
        assert!((mo.m_hat[0] - 1.0).abs() < 1e-12);
        assert!((mo.v_hat[0] - 1.0).abs() < 1e-12);
        let dir = adam_direction(&[1.0], &s0, &cfg).unwrap();
        assert!((dir[0] - 1.0 / (1.0 + 1e-8)).abs() < 1e-12);

        let (_, s1) = adam_step(&scalar(0.0), &[1.0], &s0, &cfg).unwrap();
        let mo2 = adam_moments(&[-1.0], &s1, &cfg).unwrap();
        assert!((mo2.m_hat[0] - (-0.01 / 0.19)).abs() < 1e-12);
        assert!((mo2.v_hat[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_from_zero_state_only_advances_step() {
        let cfg = AdamConfig::with_lr(0.1);
        let p = scalar(3.0);
        let (q, s) = adam_step(&p, &[0.0], &AdamState::zeros(1), &cfg).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.m, vec![0.0]);
        assert_eq!(s.v, vec![0.0]);
        assert_eq!(s.step, 1);
        assert_eq!(adam_direction(&[0.0], &AdamState::zeros(1), &cfg).unwrap(), vec![0.0]);
    }

    #[test]
    fn step_delta_is_minus_lr_times_direction() {
        let cfg = AdamConfig::with_lr(0.03);
        let state = AdamState {
            m: vec![0.2, -0.1, 0.0],
            v: vec![0.5, 0.01, 0.2],
            step: 7,
        };
        let mut p = ParamVector::zeros(&[("x", 3)]);
        p.values_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        let g = [0.3, -0.7, 1.1];
        let dir = adam_direction(&g, &state, &cfg).unwrap();
        let (q, _) = adam_step(&p, &g, &state, &cfg).unwrap();
        for i in 0..3 {
            let delta = q.values()[i] - p.values()[i];
            assert!((delta + 0.03 * dir[i]).abs() < 1e-15);
        }
        // purity
        assert_eq!(dir, adam_direction(&g, &state, &cfg).unwrap());
        assert_eq!(state.step, 7);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cfg = AdamConfig::with_lr(0.1);
        assert!(adam_direction(&[1.0, 2.0], &AdamState::zeros(1), &cfg).is_err());
        assert!(adam_step(&scalar(0.0), &[1.0, 2.0], &AdamState::zeros(2), &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::with_lr(0.1) }.validate().is_err());
        assert!(AdamConfig { beta2: -0.1, ..AdamConfig::with_lr(0.1) }.validate().is_err());
        assert!(AdamConfig { eps_adam: 0.0, ..AdamConfig::with_lr(0.1) }.validate().is_err());
        assert!(AdamConfig::with_lr(0.0).validate().is_err());
    }

    fn toy_dataset() -> Vec<LabeledExample> {
        let mut r = rng::stream(3, &[]);
        (0..40)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { 1.0 } else { -1.0 };
                LabeledExample::new(
                    vec![sign * (1.0 + r.random_range(0.0..0.5)), r.random_range(-0.5..0.5)],
                    label,
                )
            })
            .collect()
    }

    #[test]
    fn constant_lr_single_epoch_avg() {
        let spec = ClassifierSpec::linear(2, 2);
        let data = toy_dataset();
        let traj = train_epochs(
            &spec,
            &spec.init_params(0),
            &data,
            &TrainConfig::adam(0.05),
            1,
            &mut rng::stream(0, &[]),
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.last().avg_lr, 0.05);
        assert_eq!(traj.last().step, 40);
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let spec = ClassifierSpec::linear(2, 2);
        let data = toy_dataset();
        let p0 = spec.init_params(0);
        for cfg in [TrainConfig::adam(0.05), TrainConfig::sgd(0.1)] {
            let a = train_epochs(&spec, &p0, &data, &cfg, 3, &mut rng::stream(1, &[])).unwrap();
            let b = train_epochs(&spec, &p0, &data, &cfg, 3, &mut rng::stream(1, &[])).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 3);
            let before = spec.mean_loss(&p0, &data).unwrap();
            let after = spec.mean_loss(&a.last().params, &data).unwrap();
            assert!(after < before);
        }
    }

    #[test]
    fn linear_decay_average_lr() {
        let spec = ClassifierSpec::linear(2, 2);
        let data = toy_dataset();
        let cfg = TrainConfig {
            schedule: LrSchedule::LinearDecay { final_fraction: 0.5 },
            ..TrainConfig::sgd(0.1)
        };
        let t = train_epochs(&spec, &spec.init_params(0), &data, &cfg, 2, &mut rng::stream(1, &[]))
            .unwrap();
        let (a, b) = (t.checkpoints()[0].avg_lr, t.checkpoints()[1].avg_lr);
        assert!(a > b && b > 0.05 && a < 0.1);
        assert!(((a + b) / 2.0 - 0.075).abs() < 1e-12);
    }

    #[test]
    fn mini_batch_uses_mean_gradient() {
        let spec = ClassifierSpec::linear(2, 2);
        let data = toy_dataset()[..4].to_vec();
        let p0 = spec.init_params(0);
        let cfg = TrainConfig { batch_size: 4, ..TrainConfig::sgd(0.1) };
        let t = train_epochs(&spec, &p0, &data, &cfg, 1, &mut rng::stream(1, &[])).unwrap();
        let mut mean = vec![0.0; p0.len()];
        for e in &data {
            for (m, g) in mean.iter_mut().zip(spec.grad(&p0, e).unwrap()) {
                *m += g / 4.0;
            }
        }
        let expected = sgd_step(&p0, &mean, 0.1).unwrap();
        for (a, b) in t.last().params.values().iter().zip(expected.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_dataset_errors() {
        let spec = ClassifierSpec::linear(2, 2);
        let r = train_epochs(&spec, &spec.init_params(0), &[], &TrainConfig::adam(0.1), 1, &mut rng::stream(0, &[]));
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn trajectory_json_round_trip_and_schema() {
        let spec = ClassifierSpec::linear(2, 2);
        let t = train_epochs(
            &spec,
            &spec.init_params(0),
            &toy_dataset(),
            &TrainConfig::adam(0.05),
            2,
            &mut rng::stream(0, &[]),
        )
        .unwrap();
        let text = t.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let e0 = &v["epochs"][0];
        for key in ["i", "avg_lr", "params", "m", "v", "step"] {
            assert!(e0.get(key).is_some(), "missing {key}");
        }
        assert_eq!(TrainingTrajectory::from_json(&text).unwrap(), t);
        assert_eq!(t.id(), TrainingTrajectory::from_json(&text).unwrap().id());
    }

    #[test]
    fn trajectory_rejects_non_increasing_epochs() {
        let c = Checkpoint {
            epoch: 1,
            params: scalar(0.0),
            adam_state: None,
            avg_lr: 0.1,
            step: 1,
        };
        assert!(TrainingTrajectory::new(vec![c.clone(), c.clone()]).is_err());
        assert!(TrainingTrajectory::new(vec![]).is_err());
        assert!(TrainingTrajectory::new(vec![Checkpoint { avg_lr: 0.0, ..c }]).is_err());
    }

    proptest! {
        #[test]
        fn second_moment_stays_non_negative(gs in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let cfg = AdamConfig::with_lr(0.01);
            let mut p = scalar(0.0);
            let mut s = AdamState::zeros(1);
            for g in gs {
                let (q, t) = adam_step(&p, &[g], &s, &cfg).unwrap();
                prop_assert!(t.v[0] >= 0.0);
                p = q;
                s = t;
            }
        }
    }
}
