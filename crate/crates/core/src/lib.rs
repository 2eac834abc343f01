//! Software twin of a weight-sensing smart pill case.
//!
//! The case weighs its pill container with a load cell and writes the
//! current weight as an NDEF text record into an emulated tag. A phone-side
//! adherence engine reads the tag, converts weight deltas into dose counts
//! and compares them with the prescription. [`fed`] trains adherence
//! predictors across many simulated households with federated averaging.

pub mod device;
pub mod engine;
pub mod fed;
pub mod ndef;
pub mod rounding;

pub use device::{DeviceError, DeviceState, LoadCellModel, PillContainer, PowerProfile};
pub use engine::{Prescription, ScanResult, Session, Verdict};
pub use ndef::{NdefError, TagMemory, WeightReading};
