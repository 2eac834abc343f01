//! Logistic adherence predictor and client-side training.

use serde::{Deserialize, Serialize};

use super::data::{ClientDataset, FEATURE_DIM};

/// Feature weights followed by the bias.
pub const PARAM_DIM: usize = FEATURE_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams(pub [f64; PARAM_DIM]);

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams([0.0; PARAM_DIM])
    }
}

impl ModelParams {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &ModelParams) -> ModelParams {
        let mut out = self.0;
        out.iter_mut().zip(other.0.iter()).for_each(|(a, b)| *a -= b);
        ModelParams(out)
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(params: &ModelParams, x: &[f64; FEATURE_DIM]) -> f64 {
    let w = &params.0;
    x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[FEATURE_DIM]
}

/// Probability of a correct dose.
pub fn predict(params: &ModelParams, x: &[f64; FEATURE_DIM]) -> f64 {
    sigmoid(logit(params, x))
}

/// `-log p(y | x)` computed from the logit without forming `p`.
fn example_loss(z: f64, label: u8) -> f64 {
    // log(1 + e^z) - y z, stable for large |z|
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - label as f64 * z
}

/// Per-class weights in the local loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Uniform,
    /// `n / (2 n_class)` from the client's own label counts.
    InverseFrequency,
}

impl ClassWeighting {
    /// Weights for class 0 and class 1.
    pub fn weights(self, data: &ClientDataset) -> [f64; 2] {
        match self {
            ClassWeighting::Uniform => [1.0, 1.0],
            ClassWeighting::InverseFrequency => {
                let n = data.len() as f64;
                let pos = data.positives() as f64;
                let neg = n - pos;
                let w = |count: f64| if count > 0.0 { n / (2.0 * count) } else { 0.0 };
                [w(neg), w(pos)]
            }
        }
    }
}

/// Class-weighted mean logistic loss.
pub fn loss(params: &ModelParams, data: &ClientDataset, class_weights: [f64; 2]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let total: f64 = data
        .examples
        .iter()
        .map(|e| class_weights[e.label as usize] * example_loss(logit(params, &e.features), e.label))
        .sum();
    total / data.len() as f64
}

/// Analytic gradient of [`loss`].
pub fn gradient(params: &ModelParams, data: &ClientDataset, class_weights: [f64; 2]) -> ModelParams {
    let mut g = [0.0; PARAM_DIM];
    if data.is_empty() {
        return ModelParams(g);
    }
    for e in &data.examples {
        let r = class_weights[e.label as usize] * (predict(params, &e.features) - e.label as f64);
        for (gi, xi) in g.iter_mut().zip(e.features.iter()) {
            *gi += r * xi;
        }
        g[FEATURE_DIM] += r;
    }
    let n = data.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    ModelParams(g)
}

/// What a client sends to the coordinator. Nothing else crosses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub update: ModelParams,
    pub n_samples: usize,
    /// Loss of the received global model on the client's data.
    pub local_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub update: ModelParams,
    pub n_samples: usize,
    pub local_loss: f64,
    /// Loss after training.
    pub final_loss: f64,
}

/// Full-batch gradient descent for `epochs` passes. Returns `None` when the
/// client has no data and abstains.
pub fn local_train(
    params: &ModelParams,
    data: &ClientDataset,
    epochs: usize,
    lr: f64,
    class_weighting: ClassWeighting,
) -> Option<LocalOutcome> {
    if data.is_empty() {
        return None;
    }
    let cw = class_weighting.weights(data);
    let local_loss = loss(params, data, cw);
    let mut theta = *params;
    for _ in 0..epochs {
        let g = gradient(&theta, data, cw);
        theta.0.iter_mut().zip(g.0.iter()).for_each(|(t, gi)| *t -= lr * gi);
    }
    Some(LocalOutcome {
        update: theta.sub(params),
        n_samples: data.len(),
        local_loss,
        final_loss: loss(&theta, data, cw),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::data::{features, Example};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ClientDataset {
        // separable on the trailing-rate feature
        let ex = |rate: f64, label| Example { features: features(0, 0, rate, 0.5), label };
        ClientDataset {
            client_id: 0,
            examples: vec![ex(0.0, 0), ex(0.2, 0), ex(0.8, 1), ex(1.0, 1)],
        }
    }

    fn accuracy(p: &ModelParams, d: &ClientDataset) -> f64 {
        let hits = d
            .examples
            .iter()
            .filter(|e| u8::from(predict(p, &e.features) >= 0.5) == e.label)
            .count();
        hits as f64 / d.len() as f64
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let d = toy();
        let out = local_train(&ModelParams::default(), &d, 100, 1.0, ClassWeighting::Uniform).unwrap();
        let trained = ModelParams(std::array::from_fn(|i| out.update.0[i]));
        assert_eq!(accuracy(&trained, &d), 1.0);
        assert!(out.final_loss < out.local_loss);
    }

    #[test]
    fn zero_epochs_zero_update() {
        let out = local_train(&ModelParams([0.3; PARAM_DIM]), &toy(), 0, 0.5, ClassWeighting::Uniform).unwrap();
        assert_eq!(out.update, ModelParams::default());
    }

    #[test]
    fn empty_client_abstains() {
        let empty = ClientDataset { client_id: 1, examples: vec![] };
        assert!(local_train(&ModelParams::default(), &empty, 5, 0.1, ClassWeighting::Uniform).is_none());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data = ClientDataset {
            client_id: 0,
            examples: (0..40)
                .map(|i| Example {
                    features: features(i % 7, i % 3, rng.random(), rng.random()),
                    label: u8::from(rng.random::<f64>() < 0.3),
                })
                .collect(),
        };
        for weighting in [ClassWeighting::Uniform, ClassWeighting::InverseFrequency] {
            let cw = weighting.weights(&data);
            for _ in 0..10 {
                let p = ModelParams(std::array::from_fn(|_| rng.random_range(-2.0..2.0)));
                let g = gradient(&p, &data, cw);
                let h = 1e-6;
                for i in 0..PARAM_DIM {
                    let mut hi = p;
                    let mut lo = p;
                    hi.0[i] += h;
                    lo.0[i] -= h;
                    let fd = (loss(&hi, &data, cw) - loss(&lo, &data, cw)) / (2.0 * h);
                    assert!((fd - g.0[i]).abs() < 1e-5, "param {i}: fd {fd} vs {}", g.0[i]);
                }
            }
        }
    }

    #[test]
    fn inverse_frequency_balances_classes() {
        let d = ClientDataset {
            client_id: 0,
            examples: (0..10).map(|i| Example { features: features(0, 0, 0.0, 0.0), label: u8::from(i < 8) }).collect(),
        };
        let [w0, w1] = ClassWeighting::InverseFrequency.weights(&d);
        assert!((w0 * 2.0 - w1 * 8.0).abs() < 1e-12);
        assert_eq!(w0, 2.5);
    }

    #[test]
    fn loss_is_stable_for_extreme_logits() {
        let p = ModelParams([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 800.0]);
        let d = toy();
        assert!(loss(&p, &d, [1.0, 1.0]).is_finite());
    }
}
