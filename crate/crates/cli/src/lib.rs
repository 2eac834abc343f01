//! Operator tooling for the pill case simulator: scenario scripts, the
//! battery report and federation summaries. The `pillcase` binary wraps
//! these.

pub mod report;
pub mod script;

pub use report::{battery_csv, battery_table, fed_summary, BatteryInputs};
pub use script::{run, ParseError, Report, Script};
