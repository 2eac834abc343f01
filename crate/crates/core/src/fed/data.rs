use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FedError;

/// Day-of-week one-hot (7), intake slot, trailing 7-day adherence rate,
/// pills-remaining fraction.
pub const FEATURE_DIM: usize = 10;

const DOW: usize = 7;
const SLOT: usize = 7;
const TRAILING: usize = 8;
const REMAINING: usize = 9;
/// Trailing rate used before any history exists.
const NO_HISTORY_RATE: f64 = 0.5;

/// Builds one feature row. `day_of_week` is 0 for Monday.
pub fn features(
    day_of_week: usize,
    slot: usize,
    trailing_rate: f64,
    remaining_fraction: f64,
) -> [f64; FEATURE_DIM] {
    let mut x = [0.0; FEATURE_DIM];
    x[day_of_week % DOW] = 1.0;
    x[SLOT] = slot as f64;
    x[TRAILING] = trailing_rate.clamp(0.0, 1.0);
    x[REMAINING] = remaining_fraction.clamp(0.0, 1.0);
    x
}

pub fn is_weekend(day_of_week: usize) -> bool {
    day_of_week % DOW >= 5
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: [f64; FEATURE_DIM],
    /// 1 when the scheduled dose was taken correctly.
    pub label: u8,
}

/// One household's adherence log. Lives only on the client side; it has no
/// serialized form.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: u32,
    pub examples: Vec<Example>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label == 1).count()
    }

    /// Splits off the trailing `fraction` of examples as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> (ClientDataset, ClientDataset) {
        let n_test = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len().saturating_sub(n_test);
        let train = ClientDataset { client_id: self.client_id, examples: self.examples[..cut].to_vec() };
        let test = ClientDataset { client_id: self.client_id, examples: self.examples[cut..].to_vec() };
        (train, test)
    }
}

/// Synthetic household population.
///
/// A client is drawn into the low-adherence minority with probability
/// `minority_fraction`; its base adherence is then `minority_adherence`,
/// otherwise `base_adherence` jittered uniformly by `heterogeneity`. On
/// Saturdays and Sundays the adherence probability is multiplied by
/// `weekend_dip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n_clients: usize,
    pub base_adherence: f64,
    pub heterogeneity: f64,
    pub weekend_dip: f64,
    pub minority_fraction: f64,
    pub minority_adherence: f64,
    pub intakes_per_day: usize,
    pub pill_capacity: u32,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_clients: 50,
            base_adherence: 0.85,
            heterogeneity: 0.1,
            weekend_dip: 0.5,
            minority_fraction: 0.3,
            minority_adherence: 0.35,
            intakes_per_day: 2,
            pill_capacity: 30,
            seed: 7,
        }
    }
}

impl PopulationSpec {
    /// Every client at the same base rate, no minority group.
    pub fn homogeneous(n_clients: usize, base_adherence: f64, weekend_dip: f64, seed: u64) -> Self {
        Self {
            n_clients,
            base_adherence,
            heterogeneity: 0.0,
            weekend_dip,
            minority_fraction: 0.0,
            minority_adherence: 0.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FedError::Spec(format!("{name} = {v} is not in [0, 1]")))
            }
        };
        prob("base_adherence", self.base_adherence)?;
        prob("heterogeneity", self.heterogeneity)?;
        prob("weekend_dip", self.weekend_dip)?;
        prob("minority_fraction", self.minority_fraction)?;
        prob("minority_adherence", self.minority_adherence)?;
        if self.n_clients == 0 {
            return Err(FedError::Spec("n_clients must be >= 1".into()));
        }
        if self.intakes_per_day == 0 {
            return Err(FedError::Spec("intakes_per_day must be >= 1".into()));
        }
        if self.pill_capacity == 0 {
            return Err(FedError::Spec("pill_capacity must be >= 1".into()));
        }
        Ok(())
    }

    fn client_base(&self, rng: &mut ChaCha8Rng) -> f64 {
        let minority = rng.random::<f64>() < self.minority_fraction;
        let jitter = rng.random_range(-1.0..=1.0) * self.heterogeneity;
        if minority {
            self.minority_adherence
        } else {
            (self.base_adherence + jitter).clamp(0.0, 1.0)
        }
    }

    /// Adherence probability for a client with base rate `base` on a day.
    pub fn adherence_probability(&self, base: f64, day_of_week: usize) -> f64 {
        if is_weekend(day_of_week) {
            base * self.weekend_dip
        } else {
            base
        }
    }
}

/// Generates `days` of scheduled intakes per client, starting on a Monday.
/// Client `c` draws from its own ChaCha stream, so the output depends only
/// on the spec.
pub fn generate_population(spec: &PopulationSpec, days: usize) -> Result<Vec<ClientDataset>, FedError> {
    spec.validate()?;
    if days == 0 {
        return Err(FedError::Spec("days must be >= 1".into()));
    }
    let window = 7 * spec.intakes_per_day;
    let out = (0..spec.n_clients)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(c as u64);
            let base = spec.client_base(&mut rng);
            let mut history: VecDeque<u8> = VecDeque::with_capacity(window);
            let mut pills = spec.pill_capacity;
            let mut examples = Vec::with_capacity(days * spec.intakes_per_day);
            for day in 0..days {
                let dow = day % 7;
                let p = spec.adherence_probability(base, dow);
                for slot in 0..spec.intakes_per_day {
                    let trailing = if history.is_empty() {
                        NO_HISTORY_RATE
                    } else {
                        history.iter().map(|&l| l as f64).sum::<f64>() / history.len() as f64
                    };
                    let remaining = pills as f64 / spec.pill_capacity as f64;
                    let label = u8::from(rng.random::<f64>() < p);
                    examples.push(Example { features: features(dow, slot, trailing, remaining), label });
                    if history.len() == window {
                        history.pop_front();
                    }
                    history.push_back(label);
                    if label == 1 {
                        pills -= 1;
                        if pills == 0 {
                            pills = spec.pill_capacity;
                        }
                    }
                }
            }
            ClientDataset { client_id: c as u32, examples }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(data: &[ClientDataset]) -> ((f64, f64), (f64, f64)) {
        let (mut we, mut we_n, mut wd, mut wd_n) = (0.0, 0.0, 0.0, 0.0);
        for c in data {
            for e in &c.examples {
                let dow = e.features[..7].iter().position(|&v| v == 1.0).unwrap();
                if is_weekend(dow) {
                    we += e.label as f64;
                    we_n += 1.0;
                } else {
                    wd += e.label as f64;
                    wd_n += 1.0;
                }
            }
        }
        ((wd / wd_n, wd_n), (we / we_n, we_n))
    }

    #[test]
    fn no_dip_rates_match() {
        // 10^4 weekend draws: 20 clients * 2 intakes * 2 weekend days * 125 weeks
        let spec = PopulationSpec::homogeneous(20, 0.8, 1.0, 3);
        let data = generate_population(&spec, 875).unwrap();
        let ((p1, n1), (p2, n2)) = rates(&data);
        assert!(n2 >= 1e4);
        let pooled = (p1 * n1 + p2 * n2) / (n1 + n2);
        let z = (p1 - p2) / (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn weekend_dip_rates() {
        // analytic expectation: weekday 0.9, weekend 0.9 * 0.6 = 0.54
        let spec = PopulationSpec::homogeneous(50, 0.9, 0.6, 11);
        let data = generate_population(&spec, 365).unwrap();
        let ((wd, _), (we, _)) = rates(&data);
        assert!((wd - 0.9).abs() < 0.03, "weekday {wd}");
        assert!((we - 0.54).abs() < 0.03, "weekend {we}");
    }

    #[test]
    fn per_client_weekend_dip() {
        let spec = PopulationSpec { n_clients: 5, ..PopulationSpec::default() };
        for c in generate_population(&spec, 3650).unwrap() {
            let ((wd, _), (we, _)) = rates(std::slice::from_ref(&c));
            assert!(we < wd, "client {} weekend {we} weekday {wd}", c.client_id);
        }
    }

    #[test]
    fn seeded_determinism() {
        let spec = PopulationSpec::default();
        let a = generate_population(&spec, 30).unwrap();
        let b = generate_population(&spec, 30).unwrap();
        let bits = |d: &[ClientDataset]| -> Vec<u64> {
            d.iter()
                .flat_map(|c| c.examples.iter())
                .flat_map(|e| e.features.iter().map(|f| f.to_bits()).chain([e.label as u64]))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let other = generate_population(&PopulationSpec { seed: 8, ..spec }, 30).unwrap();
        assert_ne!(bits(&a), bits(&other));
    }

    #[test]
    fn invalid_spec() {
        let bad = PopulationSpec { weekend_dip: 1.5, ..PopulationSpec::default() };
        assert!(matches!(generate_population(&bad, 10), Err(FedError::Spec(_))));
        assert!(generate_population(&PopulationSpec::default(), 0).is_err());
    }

    #[test]
    fn feature_shape() {
        let x = features(5, 1, 0.25, 0.5);
        assert_eq!(x.len(), FEATURE_DIM);
        assert_eq!(&x[..7], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&x[7..], &[1.0, 0.25, 0.5]);
    }
}
