//! Network gateway for simulated pill cases.
//!
//! Plays the phone's role (scanning the closed lid and scoring doses) and
//! the sharing backend (an append-only event log that caregivers can read).
//! All state lives in per-device journals under a data directory and is
//! rebuilt by replay on startup. See `docs/API.md` for the wire format.

pub mod http;
pub mod journal;
pub mod service;

pub use http::{router, serve};
pub use journal::{FileJournal, JournalEntry, JournalStore, MemoryJournal};
pub use service::{
    events_to_examples, AdherenceEvent, DeviceStatus, EventKind, Gateway, GatewayError, PrescriptionRequest,
    RegisterRequest,
};
