//! Round loop: sample clients, train locally, aggregate, evaluate.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregationMode};
use super::config::FedConfig;
use super::data::{generate_population, ClientDataset};
use super::model::{local_train, loss, predict, ClassWeighting, ClientUpdate, ModelParams};
use super::FedError;

/// A household. Its log stays inside; training hands out a
/// [`ClientUpdate`] and evaluation hands out aggregate scores only.
#[derive(Debug, Clone)]
pub struct Client {
    id: u32,
    train: ClientDataset,
    test: ClientDataset,
}

impl Client {
    pub fn new(dataset: ClientDataset, holdout_fraction: f64) -> Self {
        let (train, test) = dataset.split_tail(holdout_fraction);
        Self { id: dataset.client_id, train, test }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn train_round(
        &self,
        global: &ModelParams,
        epochs: usize,
        lr: f64,
        class_weighting: ClassWeighting,
    ) -> Option<ClientUpdate> {
        local_train(global, &self.train, epochs, lr, class_weighting).map(|o| ClientUpdate {
            client_id: self.id,
            update: o.update,
            n_samples: o.n_samples,
            local_loss: o.local_loss,
        })
    }

    fn train_loss(&self, params: &ModelParams) -> (f64, usize) {
        (loss(params, &self.train, [1.0, 1.0]), self.train.len())
    }

    /// Unweighted logistic loss on the held-out tail.
    pub fn held_out_loss(&self, params: &ModelParams) -> f64 {
        loss(params, &self.test, [1.0, 1.0])
    }

    /// Correct predictions and size of the held-out tail.
    pub fn held_out_hits(&self, params: &ModelParams) -> (usize, usize) {
        let hits = self
            .test
            .examples
            .iter()
            .filter(|e| u8::from(predict(params, &e.features) >= 0.5) == e.label)
            .count();
        (hits, self.test.len())
    }

    fn label_counts(&self) -> ([usize; 2], [usize; 2]) {
        let count = |d: &ClientDataset| {
            let pos = d.positives();
            [d.len() - pos, pos]
        };
        (count(&self.train), count(&self.test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessStats {
    /// Population variance.
    pub variance: f64,
    pub max: f64,
    /// Mean of the worst ceil(n / 10) losses.
    pub worst_decile_mean: f64,
}

pub fn evaluate_fairness(losses: &[f64]) -> Result<FairnessStats, FedError> {
    if losses.is_empty() {
        return Err(FedError::Empty("per-client losses"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(FedError::NonFinite("per-client losses"));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let variance = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = losses.len().div_ceil(10);
    let worst_decile_mean = sorted[..k].iter().sum::<f64>() / k as f64;
    Ok(FairnessStats { variance, max: sorted[0], worst_decile_mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub participants: Vec<u32>,
    pub abstained: Vec<u32>,
    pub aggregation_weights: Vec<(u32, f64)>,
    /// Pooled training loss of the new global model.
    pub global_loss: f64,
    pub held_out_accuracy: f64,
    /// Held-out loss of every client under the new global model.
    pub client_losses: Vec<f64>,
    pub fairness: FairnessStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedHistory {
    pub mode: AggregationMode,
    /// Held-out accuracy of always predicting the training majority class.
    pub baseline_accuracy: f64,
    pub rounds: Vec<RoundMetrics>,
    pub final_params: ModelParams,
}

impl FedHistory {
    pub fn last(&self) -> &RoundMetrics {
        self.rounds.last().expect("at least one round")
    }

    /// One JSON object per round.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }
}

fn sample_clients(n: usize, k: usize, seed: u64, round: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    let mut picked = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Generates the configured population and runs the federation on it.
pub fn run_federation(config: &FedConfig) -> Result<FedHistory, FedError> {
    config.validate()?;
    let clients: Vec<Client> = generate_population(&config.population, config.days)?
        .into_iter()
        .map(|d| Client::new(d, config.holdout_fraction))
        .collect();
    run_federation_on(&clients, config)
}

/// Runs `config.rounds` rounds over existing clients, starting from zero
/// parameters.
pub fn run_federation_on(clients: &[Client], config: &FedConfig) -> Result<FedHistory, FedError> {
    if clients.is_empty() {
        return Err(FedError::Empty("clients"));
    }
    let mode = config.aggregation_mode()?;
    let (mut train_counts, mut test_counts) = ([0usize; 2], [0usize; 2]);
    for c in clients {
        let (tr, te) = c.label_counts();
        (0..2).for_each(|i| {
            train_counts[i] += tr[i];
            test_counts[i] += te[i];
        });
    }
    let majority = usize::from(train_counts[1] >= train_counts[0]);
    let test_total = test_counts[0] + test_counts[1];
    let baseline_accuracy = if test_total == 0 { 0.0 } else { test_counts[majority] as f64 / test_total as f64 };

    let mut global = ModelParams::default();
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let picked = sample_clients(clients.len(), config.clients_per_round, config.seed, round);
        let results: Vec<(u32, Option<ClientUpdate>)> = picked
            .par_iter()
            .map(|&i| {
                let c = &clients[i];
                (c.id, c.train_round(&global, config.local_epochs, config.learning_rate, config.class_weighting))
            })
            .collect();
        let abstained: Vec<u32> = results.iter().filter(|(_, u)| u.is_none()).map(|(id, _)| *id).collect();
        let updates: Vec<ClientUpdate> = results.into_iter().filter_map(|(_, u)| u).collect();
        let (next, weights) = aggregate(&global, &updates, mode);
        if !next.is_finite() {
            return Err(FedError::NonFinite("global parameters"));
        }
        global = next;

        let evals: Vec<((f64, usize), f64, (usize, usize))> = clients
            .par_iter()
            .map(|c| (c.train_loss(&global), c.held_out_loss(&global), c.held_out_hits(&global)))
            .collect();
        let n_train: usize = evals.iter().map(|e| e.0 .1).sum();
        let global_loss = if n_train == 0 {
            0.0
        } else {
            evals.iter().map(|e| e.0 .0 * e.0 .1 as f64).sum::<f64>() / n_train as f64
        };
        let (hits, seen) = evals.iter().fold((0, 0), |acc, e| (acc.0 + e.2 .0, acc.1 + e.2 .1));
        let client_losses: Vec<f64> = evals.iter().map(|e| e.1).collect();
        rounds.push(RoundMetrics {
            round,
            participants: updates.iter().map(|u| u.client_id).collect(),
            abstained,
            aggregation_weights: weights,
            global_loss,
            held_out_accuracy: if seen == 0 { 0.0 } else { hits as f64 / seen as f64 },
            fairness: evaluate_fairness(&client_losses)?,
            client_losses,
        });
    }
    Ok(FedHistory { mode, baseline_accuracy, rounds, final_params: global })
}
