//! Phone-side adherence logic: turns successive tag weights into dose counts
//! and checks them against the prescription.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndef::{NdefError, TagMemory, WeightReading};
use crate::rounding::{round_half_away, round_hundredths};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("scan failed: {0}")]
    Scan(#[from] NdefError),
    #[error("session has no baseline weight; calibrate first")]
    Uninitialized,
    #[error("invalid prescription: {0}")]
    InvalidPrescription(String),
    #[error("need at least {needed} weights, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("catalog: {0}")]
    Catalog(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Scan(NdefError::EmptyTag) => "empty_tag",
            EngineError::Scan(_) => "tag_parse_error",
            EngineError::Uninitialized => "session_uninitialized",
            EngineError::InvalidPrescription(_) => "invalid_prescription",
            EngineError::InsufficientData { .. } => "insufficient_data",
            EngineError::Catalog(_) => "catalog_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub medicine_id: String,
    pub medicine_name: String,
    /// Grams per pill.
    pub unit_weight: f64,
    /// Pills per intake.
    pub recommended_dose: u32,
    /// Intake times as minutes after midnight.
    #[serde(default)]
    pub schedule: Vec<u32>,
}

impl Prescription {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.unit_weight > 0.0 && self.unit_weight.is_finite()) {
            return Err(EngineError::InvalidPrescription("unit_weight must be positive".into()));
        }
        if self.recommended_dose < 1 {
            return Err(EngineError::InvalidPrescription("recommended_dose must be >= 1".into()));
        }
        if self.medicine_id.is_empty() {
            return Err(EngineError::InvalidPrescription("medicine_id is empty".into()));
        }
        if let Some(bad) = self.schedule.iter().find(|&&m| m >= 24 * 60) {
            return Err(EngineError::InvalidPrescription(format!(
                "schedule time {bad} is not a minute of the day"
            )));
        }
        Ok(())
    }

    /// Index of the scheduled intake closest to `minute_of_day`, wrapping
    /// around midnight. Zero when the schedule is empty.
    pub fn slot_for(&self, minute_of_day: u32) -> usize {
        let day = 24 * 60;
        self.schedule
            .iter()
            .enumerate()
            .min_by_key(|(_, &m)| {
                let d = m.abs_diff(minute_of_day % day);
                d.min(day - d)
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "k", rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Insufficient(u32),
    Exceed(u32),
    /// Weight went up by this many pills.
    Refill(u32),
}

impl Verdict {
    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }

    /// Text shown to the user under the thumb-up or warning image.
    pub fn message(self, doses: i64) -> String {
        match self {
            Verdict::Correct => format!("Correct dose: {doses} taken"),
            Verdict::Insufficient(k) => format!("You are taking {k} less than what should"),
            Verdict::Exceed(k) => format!("You are taking {k} more than what should"),
            Verdict::Refill(k) => format!("Refill detected: {k} added"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Correct => "correct",
            Verdict::Insufficient(_) => "insufficient",
            Verdict::Exceed(_) => "exceed",
            Verdict::Refill(_) => "refill",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Correct => f.write_str("correct"),
            Verdict::Insufficient(k) => write!(f, "insufficient({k})"),
            Verdict::Exceed(k) => write!(f, "exceed({k})"),
            Verdict::Refill(k) => write!(f, "refill({k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub timestamp: f64,
    pub previous_weight: WeightReading,
    pub current_weight: WeightReading,
    pub doses_taken: i64,
    #[serde(flatten)]
    pub verdict: Verdict,
}

/// Pills removed between two weights: previous minus current, over the unit
/// weight, rounded half away from zero. Negative means pills were added.
pub fn compute_doses(previous_weight: f64, current_weight: f64, unit_weight: f64) -> i64 {
    round_half_away((previous_weight - current_weight) / unit_weight)
}

fn doses_between(previous: WeightReading, current: WeightReading, unit_weight: f64) -> i64 {
    // integer tenths keep the difference exact
    let delta_tenths = previous.tenths() as i64 - current.tenths() as i64;
    round_half_away(delta_tenths as f64 / 10.0 / unit_weight)
}

pub fn evaluate(doses: i64, p: &Prescription) -> Verdict {
    let rec = p.recommended_dose as i64;
    if doses < 0 {
        Verdict::Refill(doses.unsigned_abs() as u32)
    } else if doses < rec {
        Verdict::Insufficient((rec - doses) as u32)
    } else if doses > rec {
        Verdict::Exceed((doses - rec) as u32)
    } else {
        Verdict::Correct
    }
}

/// Per-device scan state: the weight seen at the last scan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub previous_weight: Option<WeightReading>,
}

impl Session {
    /// Baseline from the current tag weight. No dose is emitted.
    pub fn calibrate_initial(tag: &TagMemory) -> Result<Session, EngineError> {
        Ok(Session { previous_weight: Some(tag.read_weight()?) })
    }

    pub fn is_calibrated(&self) -> bool {
        self.previous_weight.is_some()
    }

    /// Reads the tag, scores the delta since the last scan and returns the
    /// result with the advanced session. `self` is left untouched.
    pub fn process_scan(
        &self,
        tag: &TagMemory,
        p: &Prescription,
        now: f64,
    ) -> Result<(ScanResult, Session), EngineError> {
        let previous = self.previous_weight.ok_or(EngineError::Uninitialized)?;
        let current = tag.read_weight()?;
        let doses = doses_between(previous, current, p.unit_weight);
        let result = ScanResult {
            timestamp: now,
            previous_weight: previous,
            current_weight: current,
            doses_taken: doses,
            verdict: evaluate(doses, p),
        };
        Ok((result, Session { previous_weight: Some(current) }))
    }
}

/// Mean of successive drops in a weight series with one pill removed per
/// step, rounded to two decimals.
pub fn estimate_unit_weight(weights: &[f64]) -> Result<f64, EngineError> {
    if weights.len() < 2 {
        return Err(EngineError::InsufficientData { needed: 2, got: weights.len() });
    }
    let steps = weights.len() - 1;
    let total: f64 = weights.windows(2).map(|w| w[0] - w[1]).sum();
    Ok(round_hundredths(total / steps as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medicine {
    pub name: String,
    pub unit_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicineCatalog {
    entries: BTreeMap<String, Medicine>,
}

impl Default for MedicineCatalog {
    /// Tylenol at the measured 4.45 g unit weight of the test stand-in.
    fn default() -> Self {
        let mut c = Self::empty();
        c.insert("tylenol", "Tylenol", 4.45).expect("seed entry is valid");
        c
    }
}

impl MedicineCatalog {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: &str, name: &str, unit_weight: f64) -> Result<(), EngineError> {
        if !(unit_weight > 0.0 && unit_weight.is_finite()) {
            return Err(EngineError::Catalog(format!("unit weight for {id} must be positive")));
        }
        if self.entries.contains_key(id) {
            return Err(EngineError::Catalog(format!("duplicate medicine id {id}")));
        }
        self.entries
            .insert(id.to_owned(), Medicine { name: name.to_owned(), unit_weight });
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Medicine> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Medicine)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Prescription for a catalog medicine.
    pub fn prescribe(&self, id: &str, recommended_dose: u32, schedule: Vec<u32>) -> Result<Prescription, EngineError> {
        let m = self.get(id).ok_or_else(|| EngineError::Catalog(format!("unknown medicine {id}")))?;
        let p = Prescription {
            medicine_id: id.to_owned(),
            medicine_name: m.name.clone(),
            unit_weight: m.unit_weight,
            recommended_dose,
            schedule,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndef::write_tag;

    fn tylenol(rec: u32) -> Prescription {
        MedicineCatalog::default().prescribe("tylenol", rec, vec![8 * 60, 20 * 60]).unwrap()
    }

    fn tag_at(g: f64) -> TagMemory {
        write_tag(TagMemory::blank(), WeightReading::from_grams(g).unwrap())
    }

    #[test]
    fn compute_doses_examples() {
        assert_eq!(compute_doses(39.6, 35.2, 4.45), 1);
        assert_eq!(compute_doses(22.4, 13.5, 4.45), 2);
        assert_eq!(compute_doses(20.0, 20.0, 4.45), 0);
        assert_eq!(compute_doses(13.5, 22.4, 4.45), -2);
        assert_eq!(evaluate(-2, &tylenol(1)), Verdict::Refill(2));
    }

    #[test]
    fn evaluate_examples() {
        let p = tylenol(2);
        assert_eq!(evaluate(1, &p), Verdict::Insufficient(1));
        assert_eq!(evaluate(2, &p), Verdict::Correct);
        assert_eq!(evaluate(3, &p), Verdict::Exceed(1));
        assert_eq!(Verdict::Insufficient(1).message(1), "You are taking 1 less than what should");
        assert_eq!(Verdict::Exceed(1).message(3), "You are taking 1 more than what should");
    }

    #[test]
    fn process_scan_example() {
        let mut p = tylenol(1);
        p.unit_weight = 4.5;
        let session = Session::calibrate_initial(&tag_at(22.4)).unwrap();
        let (r, next) = session.process_scan(&tag_at(17.9), &p, 10.0).unwrap();
        assert_eq!(r.doses_taken, 1);
        assert_eq!(r.verdict, Verdict::Correct);
        assert_eq!(next.previous_weight.unwrap().grams(), 17.9);
    }

    #[test]
    fn repeated_scan_without_removal_is_insufficient() {
        let p = tylenol(2);
        let tag = tag_at(22.4);
        let s = Session::calibrate_initial(&tag).unwrap();
        let (r1, s) = s.process_scan(&tag, &p, 1.0).unwrap();
        let (r2, _) = s.process_scan(&tag, &p, 2.0).unwrap();
        assert_eq!(r1.doses_taken, 0);
        assert_eq!(r2.verdict, Verdict::Insufficient(2));
    }

    #[test]
    fn blank_tag_scan_leaves_session() {
        let s = Session::calibrate_initial(&tag_at(22.4)).unwrap();
        let before = s.clone();
        let err = s.process_scan(&TagMemory::blank(), &tylenol(1), 0.0).unwrap_err();
        assert_eq!(err, EngineError::Scan(NdefError::EmptyTag));
        assert_eq!(err.code(), "empty_tag");
        assert_eq!(s, before);
    }

    #[test]
    fn uninitialized_session_is_state_error() {
        let err = Session::default().process_scan(&tag_at(1.0), &tylenol(1), 0.0).unwrap_err();
        assert_eq!(err, EngineError::Uninitialized);
    }

    #[test]
    fn calibrate_examples() {
        assert_eq!(Session::calibrate_initial(&tag_at(22.4)).unwrap().previous_weight.unwrap().grams(), 22.4);
        let s = Session::calibrate_initial(&tag_at(10.0)).unwrap();
        let s2 = Session::calibrate_initial(&tag_at(22.4)).unwrap();
        assert_ne!(s, s2);
        let (r, _) = s2.process_scan(&tag_at(22.4), &tylenol(1), 0.0).unwrap();
        assert_eq!(r.doses_taken, 0);
        assert!(Session::calibrate_initial(&TagMemory::blank()).is_err());
    }

    #[test]
    fn unit_weight_examples() {
        let test1 = [39.6, 35.2, 30.7, 26.2, 21.7, 17.2, 12.8, 8.3, 3.9, -0.5];
        let uw = estimate_unit_weight(&test1).unwrap();
        assert_eq!(uw, 4.46);
        let synthetic: Vec<f64> = (0..8).map(|i| 40.0 - 4.4 * i as f64).collect();
        assert_eq!(estimate_unit_weight(&synthetic).unwrap(), 4.4);
        assert!(matches!(
            estimate_unit_weight(&[1.0]),
            Err(EngineError::InsufficientData { got: 1, .. })
        ));
    }

    #[test]
    fn prescription_validation() {
        let mut p = tylenol(1);
        p.recommended_dose = 0;
        assert!(p.validate().is_err());
        let mut p = tylenol(1);
        p.unit_weight = -1.0;
        assert!(p.validate().is_err());
        let mut p = tylenol(1);
        p.schedule = vec![24 * 60];
        assert!(p.validate().is_err());
    }

    #[test]
    fn slots_wrap_midnight() {
        let p = tylenol(1);
        assert_eq!(p.slot_for(7 * 60), 0);
        assert_eq!(p.slot_for(19 * 60), 1);
        assert_eq!(p.slot_for(23 * 60 + 59), 1);
    }

    #[test]
    fn catalog_rules() {
        let mut c = MedicineCatalog::default();
        assert!(c.insert("tylenol", "dup", 1.0).is_err());
        assert!(c.insert("x", "X", 0.0).is_err());
        c.insert("aspirin", "Aspirin", 0.33).unwrap();
        assert_eq!(c.iter().count(), 2);
        assert!(c.prescribe("nope", 1, vec![]).is_err());
    }

    #[test]
    fn verdict_serializes_with_k() {
        let s = serde_json::to_string(&Verdict::Exceed(1)).unwrap();
        assert_eq!(s, r#"{"verdict":"exceed","k":1}"#);
        let s = serde_json::to_string(&Verdict::Correct).unwrap();
        assert_eq!(s, r#"{"verdict":"correct"}"#);
    }
}
