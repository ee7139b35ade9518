//! Softmax classifier, optionally with one tanh hidden layer.
//!
//! Linear layout: `w` (classes × inputs, row-major) then `b` (classes).
//! Hidden layout: `w1` (hidden × inputs), `b1`, `w2` (classes × hidden), `b2`.
//! Bias segments are omitted when `bias` is false.

use serde::{Deserialize, Serialize};

use super::{log_softmax, LabeledExample};
use crate::error::{check_len, contract, Result};
use crate::params::ParamVector;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    /// Zero means a linear model.
    pub hidden_dim: usize,
    pub class_count: usize,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl ClassifierSpec {
    pub fn linear(input_dim: usize, class_count: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 0,
            class_count,
            bias: true,
        }
    }

    pub fn layout(&self) -> Vec<(&'static str, usize)> {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        let mut layout = Vec::new();
        if h == 0 {
            layout.push(("w", k * d));
            if self.bias {
                layout.push(("b", k));
            }
        } else {
            layout.push(("w1", h * d));
            if self.bias {
                layout.push(("b1", h));
            }
            layout.push(("w2", k * h));
            if self.bias {
                layout.push(("b2", k));
            }
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, n)| n).sum()
    }

    /// Fresh parameters. Linear models start at zero; hidden models draw the
    /// first layer from N(0, 1/inputs) so the tanh units are not symmetric.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut p = ParamVector::zeros(&self.layout());
        if self.hidden_dim > 0 {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = rng::stream(seed, &[0x1a7e]);
            let scale = 1.0 / (self.input_dim.max(1) as f64).sqrt();
            let seg = p.segment("w1").cloned().expect("hidden layout has w1");
            for v in &mut p.values_mut()[seg.offset..seg.offset + seg.len] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = scale * z;
            }
        }
        p
    }

    fn check(&self, params: &ParamVector, example: &LabeledExample) -> Result<()> {
        check_len("classifier params", self.param_count(), params.len())?;
        check_len("classifier features", self.input_dim, example.features.len())?;
        contract(example.label < self.class_count, || {
            format!(
                "label {} out of range for {} classes",
                example.label, self.class_count
            )
        })?;
        contract(example.features.iter().all(|x| x.is_finite()), || {
            "non-finite feature".to_string()
        })
    }

    fn seg<'a>(&self, params: &'a ParamVector, name: &str) -> Option<&'a [f64]> {
        params.slice(name)
    }

    /// Returns (hidden activations, class logits).
    fn forward(&self, params: &ParamVector, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        if h == 0 {
            let w = self.seg(params, "w").expect("w");
            let b = self.seg(params, "b");
            let logits = (0..k)
                .map(|c| {
                    let row = &w[c * d..(c + 1) * d];
                    super::dot(row, x) + b.map_or(0.0, |b| b[c])
                })
                .collect();
            (Vec::new(), logits)
        } else {
            let w1 = self.seg(params, "w1").expect("w1");
            let b1 = self.seg(params, "b1");
            let w2 = self.seg(params, "w2").expect("w2");
            let b2 = self.seg(params, "b2");
            let hidden: Vec<f64> = (0..h)
                .map(|j| (super::dot(&w1[j * d..(j + 1) * d], x) + b1.map_or(0.0, |b| b[j])).tanh())
                .collect();
            let logits = (0..k)
                .map(|c| super::dot(&w2[c * h..(c + 1) * h], &hidden) + b2.map_or(0.0, |b| b[c]))
                .collect();
            (hidden, logits)
        }
    }

    pub fn logits(&self, params: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
        check_len("classifier params", self.param_count(), params.len())?;
        check_len("classifier features", self.input_dim, features.len())?;
        Ok(self.forward(params, features).1)
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, params: &ParamVector, features: &[f64]) -> Result<usize> {
        let logits = self.logits(params, features)?;
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Cross-entropy `−log p(label | features)`.
    pub fn loss(&self, params: &ParamVector, example: &LabeledExample) -> Result<f64> {
        self.check(params, example)?;
        let (_, logits) = self.forward(params, &example.features);
        Ok(-log_softmax(&logits)[example.label])
    }

    pub fn grad(&self, params: &ParamVector, example: &LabeledExample) -> Result<Vec<f64>> {
        Ok(self.loss_and_grad(params, example)?.1)
    }

    pub fn loss_and_grad(
        &self,
        params: &ParamVector,
        example: &LabeledExample,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(params, example)?;
        let (d, h, k) = (self.input_dim, self.hidden_dim, self.class_count);
        let x = &example.features;
        let (hidden, logits) = self.forward(params, x);
        let logp = log_softmax(&logits);
        let loss = -logp[example.label];
        // dL/dlogits = softmax - onehot
        let mut dz: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        dz[example.label] -= 1.0;

        let mut g = vec![0.0; params.len()];
        if h == 0 {
            let w = params.segment("w").expect("w").offset;
            for c in 0..k {
                for j in 0..d {
                    g[w + c * d + j] = dz[c] * x[j];
                }
            }
            if let Some(b) = params.segment("b") {
                g[b.offset..b.offset + k].copy_from_slice(&dz);
            }
        } else {
            let w2 = self.seg(params, "w2").expect("w2");
            let w2_off = params.segment("w2").expect("w2").offset;
            for c in 0..k {
                for j in 0..h {
                    g[w2_off + c * h + j] = dz[c] * hidden[j];
                }
            }
            if let Some(b2) = params.segment("b2") {
                g[b2.offset..b2.offset + k].copy_from_slice(&dz);
            }
            let da: Vec<f64> = (0..h)
                .map(|j| {
                    let back: f64 = (0..k).map(|c| w2[c * h + j] * dz[c]).sum();
                    back * (1.0 - hidden[j] * hidden[j])
                })
                .collect();
            let w1_off = params.segment("w1").expect("w1").offset;
            for j in 0..h {
                for i in 0..d {
                    g[w1_off + j * d + i] = da[j] * x[i];
                }
            }
            if let Some(b1) = params.segment("b1") {
                g[b1.offset..b1.offset + h].copy_from_slice(&da);
            }
        }
        Ok((loss, g))
    }

    pub fn mean_loss(&self, params: &ParamVector, examples: &[LabeledExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(crate::Error::Empty("examples"));
        }
        let mut total = 0.0;
        for e in examples {
            total += self.loss(params, e)?;
        }
        Ok(total / examples.len() as f64)
    }

    /// Top-1 accuracy in [0, 1].
    pub fn accuracy(&self, params: &ParamVector, examples: &[LabeledExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(crate::Error::Empty("examples"));
        }
        let mut hits = 0usize;
        for e in examples {
            if self.predict(params, &e.features)? == e.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / examples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::super::fd::{central_difference, relative_error, FD_STEP};
    use super::*;
    use rand::Rng;

    fn random_params(spec: &ClassifierSpec, seed: u64) -> ParamVector {
        let mut rng = rng::stream(seed, &[]);
        let mut p = ParamVector::zeros(&spec.layout());
        for v in p.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    fn random_example(spec: &ClassifierSpec, seed: u64) -> LabeledExample {
        let mut rng = rng::stream(seed, &[99]);
        LabeledExample::new(
            (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
            rng.random_range(0..spec.class_count),
        )
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let spec = ClassifierSpec::linear(3, 4);
        let p = ParamVector::zeros(&spec.layout());
        let e = LabeledExample::new(vec![0.3, -1.0, 2.0], 2);
        assert!((spec.loss(&p, &e).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_true_class_has_tiny_loss() {
        let spec = ClassifierSpec::linear(2, 3);
        let mut p = ParamVector::zeros(&spec.layout());
        let b = p.segment("b").unwrap().offset;
        p.values_mut()[b + 1] = 20.0;
        let e = LabeledExample::new(vec![0.0, 0.0], 1);
        assert!(spec.loss(&p, &e).unwrap() < 1e-8);
    }

    #[test]
    fn zero_params_two_class_gradient_closed_form() {
        let spec = ClassifierSpec::linear(3, 2);
        let p = ParamVector::zeros(&spec.layout());
        let x = vec![1.0, -2.0, 0.5];
        let g = spec.grad(&p, &LabeledExample::new(x.clone(), 0)).unwrap();
        // (softmax − onehot) = [−0.5, +0.5]
        for j in 0..3 {
            assert!((g[j] - (-0.5 * x[j])).abs() < 1e-15);
            assert!((g[3 + j] - 0.5 * x[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_features_without_bias_give_zero_gradient() {
        let spec = ClassifierSpec {
            bias: false,
            ..ClassifierSpec::linear(4, 3)
        };
        let p = random_params(&spec, 5);
        let g = spec.grad(&p, &LabeledExample::new(vec![0.0; 4], 1)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (i, spec) in [
            ClassifierSpec::linear(5, 4),
            ClassifierSpec { hidden_dim: 3, ..ClassifierSpec::linear(5, 4) },
            ClassifierSpec { hidden_dim: 3, bias: false, ..ClassifierSpec::linear(5, 4) },
        ]
        .iter()
        .enumerate()
        {
            for s in 0..20u64 {
                let p = random_params(spec, 1000 * i as u64 + s);
                let e = random_example(spec, s);
                let g = spec.grad(&p, &e).unwrap();
                let fd = central_difference(
                    |v| spec.loss(&p.with_values(v.to_vec()).unwrap(), &e).unwrap(),
                    p.values(),
                    FD_STEP,
                );
                assert!(relative_error(&g, &fd) < 1e-4, "spec {i} seed {s}");
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let spec = ClassifierSpec::linear(3, 2);
        let p = ParamVector::zeros(&spec.layout());
        assert!(spec.loss(&p, &LabeledExample::new(vec![0.0; 2], 0)).is_err());
        assert!(spec.loss(&p, &LabeledExample::new(vec![0.0; 3], 2)).is_err());
        let wrong = ParamVector::zeros(&[("w", 5)]);
        assert!(spec.loss(&wrong, &LabeledExample::new(vec![0.0; 3], 0)).is_err());
    }

    #[test]
    fn hidden_init_is_seeded() {
        let spec = ClassifierSpec { hidden_dim: 4, ..ClassifierSpec::linear(3, 2) };
        assert_eq!(spec.init_params(1), spec.init_params(1));
        assert_ne!(spec.init_params(1), spec.init_params(2));
        assert!(ClassifierSpec::linear(3, 2).init_params(1).values().iter().all(|&v| v == 0.0));
    }
}
