use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use pillcase_cli::{battery_csv, battery_table, fed_summary, run, BatteryInputs, Script};
use pillcase_core::engine::MedicineCatalog;
use pillcase_core::fed::{run_federation, FedConfig};
use pillcase_core::ndef::{block_hex, encode_grams};
use pillcase_gateway::{FileJournal, Gateway};

#[derive(Parser)]
#[command(name = "pillcase", version, about = "Smart pill case simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script against an in-process device and engine.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the script's `seed` line.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Battery lifetime under a lid-switched duty cycle.
    Battery {
        /// Total draw while powered, in mW.
        #[arg(long, default_value_t = 320.0)]
        power: f64,
        #[arg(long, default_value_t = 300.0)]
        battery_mah: f64,
        #[arg(long, default_value_t = 9.0)]
        supply_v: f64,
        #[arg(long, default_value_t = 3.0)]
        opens: f64,
        #[arg(long, default_value_t = 5.0)]
        seconds_per_open: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Federated training over a simulated population.
    Fed {
        /// TOML config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the client sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write one JSON line per round.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Print the tag data block holding a weight, as 32 hex digits.
    NdefDump { grams: f64 },
    /// Serve the HTTP gateway until ctrl-c.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "pillcase-data")]
        data_dir: PathBuf,
    },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, seed } => {
            let text = match std::fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => return usage(format_args!("{}: {e}", scenario.display())),
            };
            let mut script = match Script::parse(&text) {
                Ok(s) => s,
                Err(e) => return usage(format_args!("{}: {e}", scenario.display())),
            };
            if let Some(seed) = seed {
                script.seed = seed;
            }
            let report = match run(&script, &MedicineCatalog::default()) {
                Ok(r) => r,
                Err(e) => return usage(e),
            };
            print!("{}", report.text);
            if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Battery { power, battery_mah, supply_v, opens, seconds_per_open, format } => {
            let inputs = BatteryInputs { power_mw: power, battery_mah, supply_v, opens_per_day: opens, seconds_per_open };
            let out = match format {
                Format::Table => battery_table(&inputs),
                Format::Csv => battery_csv(&inputs),
            };
            match out {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => usage(e),
            }
        }
        Command::Fed { config, seed, metrics } => {
            let mut cfg = match config {
                Some(path) => match std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| {
                    FedConfig::parse(&t).map_err(|e| e.to_string())
                }) {
                    Ok(c) => c,
                    Err(e) => return usage(format_args!("{}: {e}", path.display())),
                },
                None => FedConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let history = match run_federation(&cfg) {
                Ok(h) => h,
                Err(e) => return usage(e),
            };
            if let Some(path) = metrics {
                if let Err(e) = std::fs::write(&path, history.to_ndjson()) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            print!("{}", fed_summary(&history));
            ExitCode::SUCCESS
        }
        Command::NdefDump { grams } => match encode_grams(grams) {
            Ok(record) => {
                println!("{}", block_hex(&record.to_block()));
                ExitCode::SUCCESS
            }
            Err(e) => usage(e),
        },
        Command::Serve { addr, data_dir } => {
            let journal = match FileJournal::open(&data_dir) {
                Ok(j) => j,
                Err(e) => return usage(format_args!("{}: {e}", data_dir.display())),
            };
            let gateway = match Gateway::open(Arc::new(journal), MedicineCatalog::default()) {
                Ok(g) => Arc::new(g),
                Err(e) => {
                    eprintln!("error: replay failed: {e}");
                    return ExitCode::from(1);
                }
            };
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            let result = rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                pillcase_gateway::serve(listener, gateway).await
            });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
