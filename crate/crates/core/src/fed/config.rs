use serde::{Deserialize, Serialize};

use super::aggregate::AggregationMode;
use super::data::PopulationSpec;
use super::model::ClassWeighting;
use super::FedError;

/// One federation experiment. Parsed from TOML-style `key = value` text;
/// population keys live under `[population]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub population: PopulationSpec,
    pub days: usize,
    pub rounds: usize,
    pub clients_per_round: usize,
    /// `"plain"` or `"fair"`.
    pub mode: String,
    /// Exponent for fair mode.
    pub q: f64,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub class_weighting: ClassWeighting,
    /// Trailing fraction of each client's log held out for evaluation.
    pub holdout_fraction: f64,
    /// Seeds client sampling.
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            population: PopulationSpec::default(),
            days: 365,
            rounds: 100,
            clients_per_round: 10,
            mode: "plain".into(),
            q: 0.0,
            local_epochs: 5,
            learning_rate: 0.5,
            class_weighting: ClassWeighting::Uniform,
            holdout_fraction: 0.2,
            seed: 1,
        }
    }
}

impl FedConfig {
    pub fn parse(text: &str) -> Result<Self, FedError> {
        let cfg: FedConfig = toml::from_str(text).map_err(|e| FedError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn aggregation_mode(&self) -> Result<AggregationMode, FedError> {
        match self.mode.as_str() {
            "plain" => Ok(AggregationMode::Plain),
            "fair" if self.q >= 0.0 && self.q.is_finite() => Ok(AggregationMode::Fair { q: self.q }),
            "fair" => Err(FedError::Config(format!("q must be >= 0, got {}", self.q))),
            other => Err(FedError::Config(format!("unknown mode {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), FedError> {
        self.population.validate()?;
        self.aggregation_mode()?;
        if self.rounds == 0 {
            return Err(FedError::Config("rounds must be >= 1".into()));
        }
        if self.days == 0 {
            return Err(FedError::Config("days must be >= 1".into()));
        }
        if self.clients_per_round == 0 {
            return Err(FedError::Config("clients_per_round must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FedError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(FedError::Config("holdout_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_values() {
        let cfg = FedConfig::parse(
            "rounds = 20\nmode = \"fair\"\nq = 2.0\nclass_weighting = \"inverse_frequency\"\n\n[population]\nn_clients = 12\nweekend_dip = 0.6\n",
        )
        .unwrap();
        assert_eq!(cfg.rounds, 20);
        assert_eq!(cfg.population.n_clients, 12);
        assert_eq!(cfg.aggregation_mode().unwrap(), AggregationMode::Fair { q: 2.0 });
        assert_eq!(cfg.class_weighting, ClassWeighting::InverseFrequency);
        assert_eq!(cfg.days, 365);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = FedConfig::default();
        assert_eq!(FedConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(FedConfig::parse("rounds = 0").is_err());
        assert!(FedConfig::parse("mode = \"median\"").is_err());
        assert!(FedConfig::parse("mode = \"fair\"\nq = -1.0").is_err());
        assert!(FedConfig::parse("bogus = 1").is_err());
        assert!(FedConfig::parse("[population]\nbase_adherence = 1.2").is_err());
    }
}
