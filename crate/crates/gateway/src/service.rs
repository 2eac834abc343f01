use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use pillcase_core::device::{Action, DeviceConfig, DeviceError, DeviceState, Lid};
use pillcase_core::engine::{EngineError, MedicineCatalog, Prescription, Session, Verdict};
use pillcase_core::fed::{features, ClientDataset, Example};
use pillcase_core::ndef::WeightReading;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{JournalEntry, JournalStore};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown device {0}")]
    UnknownDevice(u64),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("scan rejected: lid is open and the tag is being rewritten")]
    ScanRejected,
    #[error("no prescription set for device {0}")]
    NoPrescription(u64),
    #[error("device {0} has no dose events to export")]
    InsufficientData(u64),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::UnknownDevice(_) => "unknown_device",
            GatewayError::Validation(_) => "validation_error",
            GatewayError::Device(e) => e.code(),
            GatewayError::Engine(e) => e.code(),
            GatewayError::ScanRejected => "scan_rejected",
            GatewayError::NoPrescription(_) => "no_prescription",
            GatewayError::InsufficientData(_) => "insufficient_data",
            GatewayError::Storage(_) => "storage_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Baseline weight recorded after registration or a prescription change.
    Calibration,
    Dose,
}

/// One scan as shared with caregivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceEvent {
    pub event_id: u64,
    pub device_id: u64,
    pub timestamp: f64,
    pub kind: EventKind,
    pub previous_weight: Option<WeightReading>,
    pub current_weight: WeightReading,
    pub doses_taken: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub message: String,
    pub prescription: Prescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub device_id: u64,
    pub lid: Lid,
    pub pill_count: u32,
    pub battery_mah: f64,
    pub clock: f64,
    pub tag_weight: Option<WeightReading>,
    pub calibrated: bool,
    pub prescription: Option<Prescription>,
    pub events: u64,
}

/// Body of `PUT /devices/{id}/prescription`. A catalog id supplies the unit
/// weight and name; both may be given explicitly for other medicines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionRequest {
    pub medicine_id: String,
    pub recommended_dose: u32,
    #[serde(default)]
    pub schedule: Vec<u32>,
    #[serde(default)]
    pub unit_weight: Option<f64>,
    #[serde(default)]
    pub medicine_name: Option<String>,
}

/// Body of `POST /devices`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    #[serde(default)]
    pub config: DeviceConfig,
    #[serde(default)]
    pub prescription: Option<PrescriptionRequest>,
}

struct DeviceEntry {
    id: u64,
    device: DeviceState,
    prescription: Option<Prescription>,
    session: Session,
    events: Vec<AdherenceEvent>,
}

impl DeviceEntry {
    fn new(id: u64, config: &DeviceConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            id,
            device: DeviceState::new(config)?,
            prescription: None,
            session: Session::default(),
            events: Vec::new(),
        })
    }

    fn status(&self) -> DeviceStatus {
        DeviceStatus {
            device_id: self.id,
            lid: self.device.lid(),
            pill_count: self.device.container().pill_count,
            battery_mah: self.device.battery_mah(),
            clock: self.device.clock(),
            tag_weight: self.device.tag().read_weight().ok(),
            calibrated: self.session.is_calibrated(),
            prescription: self.prescription.clone(),
            events: self.events.len() as u64,
        }
    }

    /// Computes the next scan without touching `self`.
    fn prepare_scan(&self) -> Result<(AdherenceEvent, Session), GatewayError> {
        if self.device.lid() == Lid::Open {
            return Err(GatewayError::ScanRejected);
        }
        let p = self.prescription.clone().ok_or(GatewayError::NoPrescription(self.id))?;
        let event_id = self.events.len() as u64 + 1;
        let now = self.device.clock();
        let tag = self.device.tag();
        if !self.session.is_calibrated() {
            let session = Session::calibrate_initial(tag)?;
            let weight = session.previous_weight.expect("calibrated");
            let event = AdherenceEvent {
                event_id,
                device_id: self.id,
                timestamp: now,
                kind: EventKind::Calibration,
                previous_weight: None,
                current_weight: weight,
                doses_taken: 0,
                verdict: None,
                message: format!("Baseline weight {weight} g recorded"),
                prescription: p,
            };
            return Ok((event, session));
        }
        let (r, session) = self.session.process_scan(tag, &p, now)?;
        let event = AdherenceEvent {
            event_id,
            device_id: self.id,
            timestamp: r.timestamp,
            kind: EventKind::Dose,
            previous_weight: Some(r.previous_weight),
            current_weight: r.current_weight,
            doses_taken: r.doses_taken,
            verdict: Some(r.verdict),
            message: r.verdict.message(r.doses_taken),
            prescription: p,
        };
        Ok((event, session))
    }

    fn replay(&mut self, entry: JournalEntry) -> Result<(), GatewayError> {
        match entry {
            JournalEntry::Registered { .. } => {
                return Err(GatewayError::Storage(format!("device {} registered twice", self.id)));
            }
            JournalEntry::Prescription { prescription } => {
                self.prescription = Some(prescription);
                self.session = Session::default();
            }
            JournalEntry::Action { action } => self.device.apply(action)?,
            JournalEntry::Scan { event } => {
                let (expected, session) = self.prepare_scan()?;
                if expected != event {
                    return Err(GatewayError::Storage(format!(
                        "device {} event {} does not match its replay",
                        self.id, event.event_id
                    )));
                }
                self.session = session;
                self.events.push(event);
            }
        }
        Ok(())
    }
}

/// Owns every simulated device. Each device sits behind its own mutex, so
/// operations on one device are serialized while devices proceed in
/// parallel. A change is journaled before it becomes visible; if the
/// journal write fails the device is left as it was.
pub struct Gateway {
    catalog: MedicineCatalog,
    devices: RwLock<BTreeMap<u64, Arc<Mutex<DeviceEntry>>>>,
    next_id: Mutex<u64>,
    journal: Arc<dyn JournalStore>,
}

impl Gateway {
    /// Rebuilds every device from the journal.
    pub fn open(journal: Arc<dyn JournalStore>, catalog: MedicineCatalog) -> Result<Self, GatewayError> {
        let stored = journal.load_all().map_err(|e| GatewayError::Storage(e.to_string()))?;
        let mut devices = BTreeMap::new();
        for (id, entries) in stored {
            let mut it = entries.into_iter();
            let Some(JournalEntry::Registered { config }) = it.next() else {
                return Err(GatewayError::Storage(format!("journal for device {id} has no registration")));
            };
            let mut entry = DeviceEntry::new(id, &config)?;
            for e in it {
                entry.replay(e)?;
            }
            devices.insert(id, Arc::new(Mutex::new(entry)));
        }
        let next_id = devices.keys().next_back().map_or(1, |k| k + 1);
        Ok(Self { catalog, devices: RwLock::new(devices), next_id: Mutex::new(next_id), journal })
    }

    pub fn catalog(&self) -> &MedicineCatalog {
        &self.catalog
    }

    fn write(&self, id: u64, entry: &JournalEntry) -> Result<(), GatewayError> {
        self.journal.append(id, entry).map_err(|e| GatewayError::Storage(e.to_string()))
    }

    fn device(&self, id: u64) -> Result<Arc<Mutex<DeviceEntry>>, GatewayError> {
        let map = self.devices.read().unwrap_or_else(|e| e.into_inner());
        map.get(&id).cloned().ok_or(GatewayError::UnknownDevice(id))
    }

    fn with_device<T>(&self, id: u64, f: impl FnOnce(&mut DeviceEntry) -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let dev = self.device(id)?;
        let mut guard = dev.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut guard)
    }

    pub fn resolve_prescription(&self, req: &PrescriptionRequest) -> Result<Prescription, GatewayError> {
        let known = self.catalog.get(&req.medicine_id);
        let unit_weight = req.unit_weight.or(known.map(|m| m.unit_weight)).ok_or_else(|| {
            GatewayError::Validation(format!("unknown medicine {:?} and no unit_weight given", req.medicine_id))
        })?;
        let name = req
            .medicine_name
            .clone()
            .or(known.map(|m| m.name.clone()))
            .unwrap_or_else(|| req.medicine_id.clone());
        let p = Prescription {
            medicine_id: req.medicine_id.clone(),
            medicine_name: name,
            unit_weight,
            recommended_dose: req.recommended_dose,
            schedule: req.schedule.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn register_device(&self, req: &RegisterRequest) -> Result<u64, GatewayError> {
        req.config.validate()?;
        let prescription = req.prescription.as_ref().map(|r| self.resolve_prescription(r)).transpose()?;
        let mut next = self.next_id.lock().unwrap_or_else(|e| e.into_inner());
        let id = *next;
        let mut entry = DeviceEntry::new(id, &req.config)?;
        self.write(id, &JournalEntry::Registered { config: req.config.clone() })?;
        if let Some(p) = prescription {
            // registration is already durable; a failure here leaves the device without a prescription
            self.write(id, &JournalEntry::Prescription { prescription: p.clone() })?;
            entry.prescription = Some(p);
        }
        self.devices
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(Mutex::new(entry)));
        *next += 1;
        Ok(id)
    }

    pub fn list_devices(&self) -> Vec<u64> {
        self.devices.read().unwrap_or_else(|e| e.into_inner()).keys().copied().collect()
    }

    /// A new prescription invalidates the scan baseline; re-sending the
    /// current one is a no-op.
    pub fn set_prescription(&self, id: u64, req: &PrescriptionRequest) -> Result<DeviceStatus, GatewayError> {
        let p = self.resolve_prescription(req)?;
        self.with_device(id, |d| {
            if d.prescription.as_ref() != Some(&p) {
                self.write(id, &JournalEntry::Prescription { prescription: p.clone() })?;
                d.prescription = Some(p);
                d.session = Session::default();
            }
            Ok(d.status())
        })
    }

    pub fn device_action(&self, id: u64, action: Action) -> Result<DeviceStatus, GatewayError> {
        self.with_device(id, |d| {
            let mut next = d.device.clone();
            next.apply(action)?;
            self.write(id, &JournalEntry::Action { action })?;
            d.device = next;
            Ok(d.status())
        })
    }

    pub fn scan(&self, id: u64) -> Result<AdherenceEvent, GatewayError> {
        self.with_device(id, |d| {
            let (event, session) = d.prepare_scan()?;
            self.write(id, &JournalEntry::Scan { event: event.clone() })?;
            d.session = session;
            d.events.push(event.clone());
            Ok(event)
        })
    }

    pub fn status(&self, id: u64) -> Result<DeviceStatus, GatewayError> {
        self.with_device(id, |d| Ok(d.status()))
    }

    /// Events with `event_id > since`, oldest first.
    pub fn get_events(&self, id: u64, since: u64) -> Result<Vec<AdherenceEvent>, GatewayError> {
        self.with_device(id, |d| Ok(d.events.iter().filter(|e| e.event_id > since).cloned().collect()))
    }

    /// Feature rows for the co-located federated client. Only dose events
    /// carry a label; calibration events are skipped.
    pub fn export_client_dataset(&self, id: u64) -> Result<ClientDataset, GatewayError> {
        let events = self.get_events(id, 0)?;
        let examples = events_to_examples(&events);
        if examples.is_empty() {
            return Err(GatewayError::InsufficientData(id));
        }
        Ok(ClientDataset { client_id: id as u32, examples })
    }
}

const DAY: f64 = 86_400.0;
const WEEK: f64 = 7.0 * DAY;

/// Maps dose events to feature rows. Simulation time zero is a Monday.
pub fn events_to_examples(events: &[AdherenceEvent]) -> Vec<Example> {
    let mut out = Vec::new();
    let mut history: Vec<(f64, bool)> = Vec::new();
    let mut full_weight = 0u16;
    for e in events {
        let start = e.previous_weight.unwrap_or(e.current_weight);
        full_weight = full_weight.max(start.tenths()).max(e.current_weight.tenths());
        let (Some(verdict), EventKind::Dose) = (e.verdict, e.kind) else {
            continue;
        };
        let recent: Vec<bool> = history.iter().filter(|(t, _)| e.timestamp - t < WEEK).map(|&(_, ok)| ok).collect();
        let trailing = if recent.is_empty() {
            0.5
        } else {
            recent.iter().filter(|&&ok| ok).count() as f64 / recent.len() as f64
        };
        let day = (e.timestamp / DAY).floor() as i64;
        let minute = ((e.timestamp - day as f64 * DAY) / 60.0) as u32;
        let remaining = if full_weight == 0 { 0.0 } else { e.current_weight.tenths() as f64 / full_weight as f64 };
        out.push(Example {
            features: features(day.rem_euclid(7) as usize, e.prescription.slot_for(minute), trailing, remaining),
            label: u8::from(verdict.is_correct()),
        });
        history.push((e.timestamp, verdict.is_correct()));
    }
    out
}
