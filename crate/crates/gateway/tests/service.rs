use std::sync::Arc;
use std::thread;

use pillcase_core::device::{Action, DeviceConfig, Lid};
use pillcase_core::engine::{MedicineCatalog, Verdict};
use pillcase_core::fed::FEATURE_DIM;
use pillcase_gateway::{
    EventKind, FileJournal, Gateway, GatewayError, JournalStore, MemoryJournal, PrescriptionRequest, RegisterRequest,
};

fn tylenol(dose: u32) -> PrescriptionRequest {
    PrescriptionRequest {
        medicine_id: "tylenol".into(),
        recommended_dose: dose,
        schedule: vec![],
        unit_weight: None,
        medicine_name: None,
    }
}

fn five_pills() -> RegisterRequest {
    RegisterRequest {
        config: DeviceConfig { pills: 5, unit_mass: 4.45, ..DeviceConfig::default() },
        prescription: Some(tylenol(1)),
    }
}

fn take(gw: &Gateway, id: u64, n: u32) {
    gw.device_action(id, Action::Open).unwrap();
    gw.device_action(id, Action::Advance { seconds: 2.0 }).unwrap();
    if n > 0 {
        gw.device_action(id, Action::Remove { n }).unwrap();
        gw.device_action(id, Action::Advance { seconds: 5.0 }).unwrap();
    }
    gw.device_action(id, Action::Close).unwrap();
}

fn memory_gateway() -> (Arc<MemoryJournal>, Gateway) {
    let journal = Arc::new(MemoryJournal::new());
    let gw = Gateway::open(journal.clone(), MedicineCatalog::default()).unwrap();
    (journal, gw)
}

/// Registers, opens once so the tag holds a weight, then takes the baseline.
fn ready(gw: &Gateway, req: &RegisterRequest) -> u64 {
    let id = gw.register_device(req).unwrap();
    take(gw, id, 0);
    let baseline = gw.scan(id).unwrap();
    assert_eq!(baseline.kind, EventKind::Calibration);
    id
}

#[test]
fn register_then_list() {
    let (_, gw) = memory_gateway();
    let id = gw.register_device(&RegisterRequest::default()).unwrap();
    assert_eq!(gw.list_devices(), vec![id]);
    assert_eq!(gw.status(id).unwrap().pill_count, 9);
}

#[test]
fn zero_dose_is_a_validation_error() {
    let (_, gw) = memory_gateway();
    let id = gw.register_device(&RegisterRequest::default()).unwrap();
    let err = gw.set_prescription(id, &tylenol(0)).unwrap_err();
    assert_eq!(err.code(), "invalid_prescription");
}

#[test]
fn unknown_medicine_needs_a_unit_weight() {
    let (_, gw) = memory_gateway();
    let id = gw.register_device(&RegisterRequest::default()).unwrap();
    let mut req = tylenol(1);
    req.medicine_id = "aspirin".into();
    assert!(matches!(gw.set_prescription(id, &req), Err(GatewayError::Validation(_))));
    req.unit_weight = Some(0.5);
    let status = gw.set_prescription(id, &req).unwrap();
    assert_eq!(status.prescription.unwrap().medicine_name, "aspirin");
}

#[test]
fn unknown_device() {
    let (_, gw) = memory_gateway();
    assert!(matches!(gw.scan(42), Err(GatewayError::UnknownDevice(42))));
    assert!(matches!(gw.get_events(42, 0), Err(GatewayError::UnknownDevice(42))));
}

#[test]
fn remove_one_then_two_counts_from_last_state() {
    let (_, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());

    take(&gw, id, 1);
    let first = gw.scan(id).unwrap();
    assert_eq!(first.doses_taken, 1);
    assert_eq!(first.verdict, Some(Verdict::Correct));

    take(&gw, id, 2);
    let second = gw.scan(id).unwrap();
    assert_eq!(second.doses_taken, 2);
    assert_eq!(second.verdict, Some(Verdict::Exceed(1)));
    assert_eq!(second.previous_weight, Some(first.current_weight));
    assert_eq!(second.message, "You are taking 1 more than what should");
}

#[test]
fn scan_with_open_lid_is_rejected() {
    let (journal, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());
    gw.device_action(id, Action::Open).unwrap();
    let before = journal.entries(id).len();
    assert!(matches!(gw.scan(id), Err(GatewayError::ScanRejected)));
    assert_eq!(journal.entries(id).len(), before);
}

#[test]
fn scan_of_a_never_opened_case_is_an_empty_tag() {
    let (_, gw) = memory_gateway();
    let id = gw.register_device(&five_pills()).unwrap();
    assert_eq!(gw.scan(id).unwrap_err().code(), "empty_tag");
}

#[test]
fn illegal_action_is_not_journaled() {
    let (journal, gw) = memory_gateway();
    let id = gw.register_device(&five_pills()).unwrap();
    let before = journal.entries(id).len();
    assert_eq!(gw.device_action(id, Action::Remove { n: 1 }).unwrap_err().code(), "lid_closed");
    assert_eq!(journal.entries(id).len(), before);
}

#[test]
fn new_medicine_forces_recalibration_and_same_settings_do_not() {
    let (journal, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());

    let before = journal.entries(id).len();
    assert!(gw.set_prescription(id, &tylenol(1)).unwrap().calibrated);
    assert_eq!(journal.entries(id).len(), before);

    let status = gw.set_prescription(id, &tylenol(2)).unwrap();
    assert!(!status.calibrated);
    take(&gw, id, 1);
    let ev = gw.scan(id).unwrap();
    assert_eq!(ev.kind, EventKind::Calibration);
    assert_eq!(ev.verdict, None);
    take(&gw, id, 2);
    assert_eq!(gw.scan(id).unwrap().verdict, Some(Verdict::Correct));
}

#[test]
fn events_since() {
    let (_, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());
    take(&gw, id, 1);
    gw.scan(id).unwrap();
    let all = gw.get_events(id, 0).unwrap();
    assert_eq!(all.iter().map(|e| e.event_id).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(gw.get_events(id, 1).unwrap(), all[1..].to_vec());
    assert!(gw.get_events(id, 2).unwrap().is_empty());
}

#[test]
fn restart_replays_the_file_journal() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let gw = Gateway::open(Arc::new(FileJournal::open(dir.path()).unwrap()), MedicineCatalog::default()).unwrap();
        let id = ready(&gw, &five_pills());
        take(&gw, id, 1);
        gw.scan(id).unwrap();
        (id, gw.get_events(id, 0).unwrap())
    };

    let gw = Gateway::open(Arc::new(FileJournal::open(dir.path()).unwrap()), MedicineCatalog::default()).unwrap();
    assert_eq!(gw.get_events(id, 0).unwrap(), before);
    take(&gw, id, 2);
    let third = gw.scan(id).unwrap();
    assert_eq!(third.event_id, 3);
    assert_eq!(third.previous_weight, Some(before[1].current_weight));
    assert_eq!(third.doses_taken, 2);

    let next = gw.register_device(&RegisterRequest::default()).unwrap();
    assert_eq!(next, id + 1);
}

#[test]
fn failed_scan_write_changes_nothing() {
    let (journal, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());
    take(&gw, id, 1);
    let status = gw.status(id).unwrap();

    journal.fail_after(0);
    assert_eq!(gw.scan(id).unwrap_err().code(), "storage_error");
    assert_eq!(gw.status(id).unwrap(), status);
    assert_eq!(gw.get_events(id, 0).unwrap().len(), 1);
    assert!(gw.device_action(id, Action::Open).is_err());
    assert_eq!(gw.status(id).unwrap().lid, Lid::Closed);

    journal.heal();
    let ev = gw.scan(id).unwrap();
    assert_eq!((ev.event_id, ev.doses_taken), (2, 1));

    // the journal and memory still agree
    let replayed = Gateway::open(journal.clone(), MedicineCatalog::default()).unwrap();
    assert_eq!(replayed.get_events(id, 0).unwrap(), gw.get_events(id, 0).unwrap());
    assert_eq!(replayed.status(id).unwrap(), gw.status(id).unwrap());
}

#[test]
fn concurrent_scans_are_serialized() {
    let (_, gw) = memory_gateway();
    let id = ready(&gw, &five_pills());
    take(&gw, id, 1);
    let gw = Arc::new(gw);
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let gw = gw.clone();
            thread::spawn(move || gw.scan(id).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let events = gw.get_events(id, 0).unwrap();
    assert_eq!(events.len(), 9);
    for (i, pair) in events.windows(2).enumerate() {
        assert_eq!(pair[1].event_id, i as u64 + 2);
        assert_eq!(pair[1].previous_weight, Some(pair[0].current_weight));
    }
    let doses: i64 = events.iter().map(|e| e.doses_taken).sum();
    assert_eq!(doses, 1);
}

#[test]
fn devices_are_independent_under_load() {
    let (journal, gw) = memory_gateway();
    let gw = Arc::new(gw);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let gw = gw.clone();
            thread::spawn(move || {
                let id = ready(&gw, &five_pills());
                take(&gw, id, 1);
                (id, gw.scan(id).unwrap().doses_taken)
            })
        })
        .collect();
    let mut ids: Vec<u64> = handles
        .into_iter()
        .map(|h| {
            let (id, doses) = h.join().unwrap();
            assert_eq!(doses, 1);
            id
        })
        .collect();
    ids.sort();
    assert_eq!(ids, vec![1, 2, 3, 4]);
    assert_eq!(journal.load_all().unwrap().len(), 4);
}

#[test]
fn export_maps_dose_events_to_labelled_rows() {
    let (_, gw) = memory_gateway();
    let id = gw.register_device(&five_pills()).unwrap();
    assert_eq!(gw.export_client_dataset(id).unwrap_err().code(), "insufficient_data");

    take(&gw, id, 0);
    gw.scan(id).unwrap();
    // only the calibration event so far
    assert_eq!(gw.export_client_dataset(id).unwrap_err().code(), "insufficient_data");

    take(&gw, id, 1);
    gw.scan(id).unwrap();
    let ds = gw.export_client_dataset(id).unwrap();
    assert_eq!(ds.client_id, id as u32);
    assert_eq!(ds.examples.len(), 1);
    assert_eq!(ds.examples[0].label, 1);
    assert_eq!(ds.examples[0].features.len(), FEATURE_DIM);

    take(&gw, id, 0);
    gw.scan(id).unwrap();
    let ds = gw.export_client_dataset(id).unwrap();
    assert_eq!(ds.examples.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
}
