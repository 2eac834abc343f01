//! Coordinator-side merge of client updates.

use serde::{Deserialize, Serialize};

use super::model::{ClientUpdate, ModelParams, PARAM_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AggregationMode {
    /// Weights proportional to sample counts.
    Plain,
    /// Weights proportional to `n_samples * local_loss^q`.
    Fair { q: f64 },
}

/// Record of one aggregation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedRound {
    pub round_index: usize,
    pub updates: Vec<ClientUpdate>,
    pub aggregation_weights: Vec<(u32, f64)>,
    pub global_before: ModelParams,
    pub global_after: ModelParams,
}

/// Normalized weight per update, in the order given. Clients with no
/// samples get zero. Returns `None` when nothing carries weight.
pub fn aggregation_weights(updates: &[ClientUpdate], mode: AggregationMode) -> Option<Vec<f64>> {
    let raw_for = |mode: AggregationMode| -> Vec<f64> {
        updates
            .iter()
            .map(|u| {
                let n = u.n_samples as f64;
                match mode {
                    AggregationMode::Plain => n,
                    AggregationMode::Fair { q } => n * u.local_loss.max(0.0).powf(q),
                }
            })
            .collect()
    };
    let mut raw = raw_for(mode);
    let mut total: f64 = raw.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        // every participant has zero loss under fair(q > 0): fall back to counts
        raw = raw_for(AggregationMode::Plain);
        total = raw.iter().sum();
    }
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(raw.into_iter().map(|w| w / total).collect())
}

/// Merges updates into `global`. Updates are summed in client-id order so
/// the result does not depend on arrival order. With no contributing
/// client the parameters are returned unchanged.
pub fn aggregate(global: &ModelParams, updates: &[ClientUpdate], mode: AggregationMode) -> (ModelParams, Vec<(u32, f64)>) {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let owned: Vec<ClientUpdate> = sorted.iter().map(|u| (*u).clone()).collect();
    let Some(weights) = aggregation_weights(&owned, mode) else {
        return (*global, Vec::new());
    };
    let mut delta = [0.0; PARAM_DIM];
    for (u, w) in owned.iter().zip(weights.iter()) {
        for (d, x) in delta.iter_mut().zip(u.update.0.iter()) {
            *d += w * x;
        }
    }
    let mut next = global.0;
    next.iter_mut().zip(delta.iter()).for_each(|(p, d)| *p += d);
    let ids = owned.iter().map(|u| u.client_id).zip(weights).collect();
    (ModelParams(next), ids)
}
