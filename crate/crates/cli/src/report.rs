use std::fmt::Write as _;

use pillcase_core::device::{battery_lifetime, DeviceError, Lifetime, PowerProfile};
use pillcase_core::fed::FedHistory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryInputs {
    /// Rated total draw while powered.
    pub power_mw: f64,
    pub battery_mah: f64,
    pub supply_v: f64,
    pub opens_per_day: f64,
    pub seconds_per_open: f64,
}

impl Default for BatteryInputs {
    fn default() -> Self {
        Self { power_mw: 320.0, battery_mah: 300.0, supply_v: 9.0, opens_per_day: 3.0, seconds_per_open: 5.0 }
    }
}

impl BatteryInputs {
    pub fn lifetime(&self) -> Result<Lifetime, DeviceError> {
        battery_lifetime(self.power_mw, self.battery_mah, self.supply_v, self.opens_per_day, self.seconds_per_open)
    }
}

pub fn battery_table(inputs: &BatteryInputs) -> Result<String, DeviceError> {
    let life = inputs.lifetime()?;
    let profile = PowerProfile::prototype();
    let mut out = String::new();
    let _ = writeln!(out, "{:<14}{:>12}{:>12}{:>12}", "component", "current_mA", "voltage_V", "power_mW");
    for c in &profile.components {
        let _ = writeln!(out, "{:<14}{:>12.1}{:>12.1}{:>12.1}", c.name, c.current_ma, c.voltage_v, c.power_mw());
    }
    let _ = writeln!(out, "{:<14}{:>36.1}", "sum", profile.total_power_mw());
    let _ = writeln!(out, "{:<14}{:>36.1}", "used", inputs.power_mw);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "battery {} mAh at {} V, {} opens/day x {} s",
        inputs.battery_mah, inputs.supply_v, inputs.opens_per_day, inputs.seconds_per_open
    );
    match life {
        Lifetime::Days(d) => {
            let _ = writeln!(out, "lifetime: {d:.1} days ({:.2} years)", d / 365.25);
        }
        Lifetime::Unbounded => {
            let _ = writeln!(out, "lifetime: unbounded (no draw)");
        }
    }
    Ok(out)
}

pub fn battery_csv(inputs: &BatteryInputs) -> Result<String, DeviceError> {
    let (days, years) = match inputs.lifetime()? {
        Lifetime::Days(d) => (format!("{d:.3}"), format!("{:.4}", d / 365.25)),
        Lifetime::Unbounded => ("inf".into(), "inf".into()),
    };
    Ok(format!(
        "power_mw,battery_mah,supply_v,opens_per_day,seconds_per_open,lifetime_days,lifetime_years\n{},{},{},{},{},{days},{years}\n",
        inputs.power_mw, inputs.battery_mah, inputs.supply_v, inputs.opens_per_day, inputs.seconds_per_open
    ))
}

pub fn fed_summary(h: &FedHistory) -> String {
    let last = h.last();
    let mode = match h.mode {
        pillcase_core::fed::AggregationMode::Plain => "plain".to_owned(),
        pillcase_core::fed::AggregationMode::Fair { q } => format!("fair (q = {q})"),
    };
    let mut out = String::new();
    let _ = writeln!(out, "mode               {mode}");
    let _ = writeln!(out, "rounds             {}", h.rounds.len());
    let _ = writeln!(out, "baseline accuracy  {:.4}", h.baseline_accuracy);
    let _ = writeln!(out, "held-out accuracy  {:.4}", last.held_out_accuracy);
    let _ = writeln!(out, "lift (points)      {:+.2}", 100.0 * (last.held_out_accuracy - h.baseline_accuracy));
    let _ = writeln!(out, "global loss        {:.4}", last.global_loss);
    let _ = writeln!(out, "client loss var    {:.6}", last.fairness.variance);
    let _ = writeln!(out, "client loss max    {:.4}", last.fairness.max);
    let _ = writeln!(out, "worst decile mean  {:.4}", last.fairness.worst_decile_mean);
    out
}
