//! Scenario scripts.
//!
//! A script is a line-oriented list of settings followed by steps. `#`
//! starts a comment. Settings must come before the first step:
//!
//! ```text
//! seed 7            pills 5          unit_mass 4.45     tare 0.0
//! noise 0.05        drift 0.6        span_error 0.0     window 50
//! medicine tylenol  unit_weight 4.45 dose 2             settle 5
//! ```
//!
//! Steps: `open`, `close`, `remove N`, `refill N`, `advance SECONDS`,
//! `scan`, `read`, `dose N` (new prescription, forces a fresh baseline) and
//! `expect ...`. `open`, `remove` and `refill` advance the clock by the
//! settle time so the firmware average can converge.
//!
//! Expectations: `doses N`, `verdict NAME [K]`, `message TEXT`, `baseline`,
//! `weight X`, `pills N`, `step LO HI` (every drop between reads),
//! `unit_weight LO HI` (estimate over the reads) and `error CODE` (the
//! previous step failed with that code).

use std::fmt::Write as _;

use pillcase_core::device::{DeviceConfig, DeviceState, Lid, LoadCellModel};
use pillcase_core::engine::{estimate_unit_weight, MedicineCatalog, Prescription, Session, Verdict};
use pillcase_core::ndef::WeightReading;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Doses(i64),
    Verdict(Verdict),
    Message(String),
    Baseline,
    Weight(WeightReading),
    Pills(u32),
    Step(f64, f64),
    UnitWeight(f64, f64),
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Open,
    Close,
    Remove(u32),
    Refill(u32),
    Advance(f64),
    Scan,
    Read,
    Dose(u32),
    Expect(Expect),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub seed: u64,
    pub config: DeviceConfig,
    pub medicine: String,
    pub unit_weight: Option<f64>,
    pub dose: u32,
    pub settle: f64,
    /// `(line number, step)`
    pub steps: Vec<(usize, Step)>,
}

impl Default for Script {
    fn default() -> Self {
        Self {
            seed: 0,
            config: DeviceConfig::default(),
            medicine: "tylenol".into(),
            unit_weight: None,
            dose: 1,
            settle: 5.0,
            steps: Vec::new(),
        }
    }
}

fn arg<T: std::str::FromStr>(words: &[&str], i: usize, what: &str) -> Result<T, String> {
    let w = words.get(i).ok_or_else(|| format!("{} needs {what}", words[0]))?;
    w.parse().map_err(|_| format!("{} expects {what}, got {w:?}", words[0]))
}

fn no_more(words: &[&str], n: usize) -> Result<(), String> {
    match words.get(n) {
        Some(extra) => Err(format!("unexpected {extra:?} after {}", words[..n].join(" "))),
        None => Ok(()),
    }
}

fn parse_expect(rest: &str) -> Result<Expect, String> {
    let words: Vec<&str> = rest.split_whitespace().collect();
    let Some(&kind) = words.first() else {
        return Err("expect needs a clause".into());
    };
    let range = |words: &[&str]| -> Result<(f64, f64), String> {
        let lo: f64 = arg(words, 1, "a lower bound")?;
        let hi: f64 = arg(words, 2, "an upper bound")?;
        no_more(words, 3)?;
        if lo > hi {
            return Err(format!("empty range {lo}..{hi}"));
        }
        Ok((lo, hi))
    };
    let e = match kind {
        "doses" => {
            no_more(&words, 2)?;
            Expect::Doses(arg(&words, 1, "an integer")?)
        }
        "verdict" => {
            let name = words.get(1).copied().unwrap_or("");
            let v = if name == "correct" {
                no_more(&words, 2)?;
                Verdict::Correct
            } else {
                let k: u32 = arg(&words, 2, "a count")?;
                no_more(&words, 3)?;
                match name {
                    "insufficient" => Verdict::Insufficient(k),
                    "exceed" => Verdict::Exceed(k),
                    "refill" => Verdict::Refill(k),
                    _ => return Err(format!("unknown verdict {name:?}")),
                }
            };
            Expect::Verdict(v)
        }
        "message" => {
            let text = rest[kind.len()..].trim();
            let text = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(text);
            Expect::Message(text.to_owned())
        }
        "baseline" => {
            no_more(&words, 1)?;
            Expect::Baseline
        }
        "weight" => {
            no_more(&words, 2)?;
            let g: f64 = arg(&words, 1, "grams")?;
            Expect::Weight(WeightReading::from_grams(g).map_err(|e| e.to_string())?)
        }
        "pills" => {
            no_more(&words, 2)?;
            Expect::Pills(arg(&words, 1, "a count")?)
        }
        "step" => {
            let (lo, hi) = range(&words)?;
            Expect::Step(lo, hi)
        }
        "unit_weight" => {
            let (lo, hi) = range(&words)?;
            Expect::UnitWeight(lo, hi)
        }
        "error" => {
            no_more(&words, 2)?;
            Expect::Error(arg(&words, 1, "an error code")?)
        }
        other => return Err(format!("unknown expectation {other:?}")),
    };
    Ok(e)
}

impl Script {
    pub fn parse(text: &str) -> Result<Script, ParseError> {
        let mut s = Script::default();
        let mut cell = LoadCellModel::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ParseError { line, message };
            let words: Vec<&str> = content.split_whitespace().collect();
            let key = words[0];
            let setting = matches!(
                key,
                "seed" | "pills" | "unit_mass" | "tare" | "noise" | "drift" | "span_error" | "window" | "medicine"
                    | "unit_weight" | "settle"
            );
            if setting && !s.steps.is_empty() {
                return Err(err(format!("setting {key:?} must come before the first step")));
            }
            let parsed: Result<Option<Step>, String> = (|| {
                let one = |words: &[&str]| no_more(words, 2);
                Ok(match key {
                    "seed" => {
                        one(&words)?;
                        s.seed = arg(&words, 1, "an integer")?;
                        None
                    }
                    "pills" => {
                        one(&words)?;
                        s.config.pills = arg(&words, 1, "a count")?;
                        None
                    }
                    "unit_mass" => {
                        one(&words)?;
                        s.config.unit_mass = arg(&words, 1, "grams")?;
                        None
                    }
                    "tare" => {
                        one(&words)?;
                        s.config.tare_mass = arg(&words, 1, "grams")?;
                        None
                    }
                    "noise" => {
                        one(&words)?;
                        cell.noise_sigma = arg(&words, 1, "grams")?;
                        None
                    }
                    "drift" => {
                        one(&words)?;
                        cell.session_drift = arg(&words, 1, "grams")?;
                        None
                    }
                    "span_error" => {
                        one(&words)?;
                        cell.span_error = arg(&words, 1, "a fraction")?;
                        None
                    }
                    "window" => {
                        one(&words)?;
                        s.config.average_window = arg(&words, 1, "a sample count")?;
                        None
                    }
                    "medicine" => {
                        one(&words)?;
                        s.medicine = arg(&words, 1, "a medicine id")?;
                        None
                    }
                    "unit_weight" => {
                        one(&words)?;
                        s.unit_weight = Some(arg(&words, 1, "grams")?);
                        None
                    }
                    "settle" => {
                        one(&words)?;
                        s.settle = arg(&words, 1, "seconds")?;
                        None
                    }
                    "dose" if s.steps.is_empty() => {
                        one(&words)?;
                        s.dose = arg(&words, 1, "a count")?;
                        None
                    }
                    "dose" => {
                        one(&words)?;
                        Some(Step::Dose(arg(&words, 1, "a count")?))
                    }
                    "open" | "close" | "scan" | "read" => {
                        no_more(&words, 1)?;
                        Some(match key {
                            "open" => Step::Open,
                            "close" => Step::Close,
                            "scan" => Step::Scan,
                            _ => Step::Read,
                        })
                    }
                    "remove" => {
                        one(&words)?;
                        Some(Step::Remove(arg(&words, 1, "a count")?))
                    }
                    "refill" => {
                        one(&words)?;
                        Some(Step::Refill(arg(&words, 1, "a count")?))
                    }
                    "advance" => {
                        one(&words)?;
                        Some(Step::Advance(arg(&words, 1, "seconds")?))
                    }
                    "expect" => Some(Step::Expect(parse_expect(content["expect".len()..].trim())?)),
                    other => return Err(format!("unknown command {other:?}")),
                })
            })();
            if let Some(step) = parsed.map_err(err)? {
                s.steps.push((line, step));
            }
        }
        if !(s.settle >= 0.0 && s.settle.is_finite()) {
            return Err(ParseError { line: 0, message: "settle must be >= 0".into() });
        }
        s.config.cell = cell;
        Ok(s)
    }
}

/// Outcome of one script run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub passed: usize,
    pub failed: usize,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

struct LastScan {
    baseline: bool,
    weight: WeightReading,
    doses: i64,
    verdict: Option<Verdict>,
    message: String,
}

struct Runner<'a> {
    catalog: &'a MedicineCatalog,
    device: DeviceState,
    prescription: Prescription,
    session: Session,
    settle: f64,
    last_scan: Option<LastScan>,
    reads: Vec<WeightReading>,
}

/// (code, message)
type StepError = (String, String);

fn dev(e: pillcase_core::device::DeviceError) -> StepError {
    (e.code().to_owned(), e.to_string())
}

fn eng(e: pillcase_core::engine::EngineError) -> StepError {
    (e.code().to_owned(), e.to_string())
}

impl Runner<'_> {
    fn prescribe(&self, medicine: &str, unit_weight: Option<f64>, dose: u32) -> Result<Prescription, StepError> {
        match unit_weight {
            Some(uw) => {
                let p = Prescription {
                    medicine_id: medicine.to_owned(),
                    medicine_name: medicine.to_owned(),
                    unit_weight: uw,
                    recommended_dose: dose,
                    schedule: vec![],
                };
                p.validate().map_err(eng)?;
                Ok(p)
            }
            None => self.catalog.prescribe(medicine, dose, vec![]).map_err(eng),
        }
    }

    fn step(&mut self, step: &Step) -> Result<String, StepError> {
        let settle = |d: &mut DeviceState, s: f64| if s > 0.0 { d.advance(s).map_err(dev) } else { Ok(()) };
        Ok(match *step {
            Step::Open => {
                self.device.open_lid();
                settle(&mut self.device, self.settle)?;
                "lid open".into()
            }
            Step::Close => {
                self.device.close_lid();
                "lid closed".into()
            }
            Step::Remove(n) => {
                self.device.remove_pills(n).map_err(dev)?;
                settle(&mut self.device, self.settle)?;
                format!("{} pills left", self.device.container().pill_count)
            }
            Step::Refill(n) => {
                self.device.refill(n).map_err(dev)?;
                settle(&mut self.device, self.settle)?;
                format!("{} pills left", self.device.container().pill_count)
            }
            Step::Advance(t) => {
                self.device.advance(t).map_err(dev)?;
                format!("clock {:.1} s", self.device.clock())
            }
            Step::Dose(n) => {
                let p = self.prescribe(&self.prescription.medicine_id, Some(self.prescription.unit_weight), n)?;
                self.prescription = p;
                self.session = Session::default();
                format!("recommended dose {n}, baseline cleared")
            }
            Step::Read => {
                let w = self.device.tag().read_weight().map_err(|e| eng(e.into()))?;
                let line = match self.reads.last() {
                    Some(prev) => format!("{w} g (drop {:.1})", (prev.tenths() as f64 - w.tenths() as f64) / 10.0),
                    None => format!("{w} g"),
                };
                self.reads.push(w);
                line
            }
            Step::Scan => {
                if self.device.lid() == Lid::Open {
                    return Err(("scan_rejected".into(), "lid is open".into()));
                }
                let now = self.device.clock();
                if self.session.is_calibrated() {
                    let (r, next) = self.session.process_scan(self.device.tag(), &self.prescription, now).map_err(eng)?;
                    self.session = next;
                    let message = r.verdict.message(r.doses_taken);
                    let line = format!("{} -> {} g, {} doses: {message}", r.previous_weight, r.current_weight, r.doses_taken);
                    self.last_scan = Some(LastScan {
                        baseline: false,
                        weight: r.current_weight,
                        doses: r.doses_taken,
                        verdict: Some(r.verdict),
                        message,
                    });
                    line
                } else {
                    self.session = Session::calibrate_initial(self.device.tag()).map_err(eng)?;
                    let w = self.session.previous_weight.expect("just calibrated");
                    self.last_scan = Some(LastScan {
                        baseline: true,
                        weight: w,
                        doses: 0,
                        verdict: None,
                        message: format!("Baseline weight {w} g recorded"),
                    });
                    format!("baseline {w} g")
                }
            }
            Step::Expect(_) => unreachable!("expectations are checked by the caller"),
        })
    }

    fn check(&self, e: &Expect, last_error: Option<&StepError>) -> Result<(), String> {
        let scan = || self.last_scan.as_ref().ok_or_else(|| "no scan yet".to_owned());
        let reads = || -> Result<Vec<f64>, String> {
            if self.reads.len() < 2 {
                return Err(format!("need at least 2 reads, have {}", self.reads.len()));
            }
            Ok(self.reads.iter().map(|w| w.grams()).collect())
        };
        match e {
            Expect::Error(code) => match last_error {
                Some((got, _)) if got == code => Ok(()),
                Some((got, msg)) => Err(format!("got error {got} ({msg})")),
                None => Err("previous step succeeded".into()),
            },
            Expect::Doses(n) => {
                let s = scan()?;
                if s.baseline || s.doses != *n {
                    return Err(format!("got {} doses", s.doses));
                }
                Ok(())
            }
            Expect::Verdict(v) => match scan()?.verdict {
                Some(got) if got == *v => Ok(()),
                Some(got) => Err(format!("got {}", describe(got))),
                None => Err("last scan was a baseline".into()),
            },
            Expect::Message(m) => {
                let got = &scan()?.message;
                if got == m {
                    Ok(())
                } else {
                    Err(format!("got {got:?}"))
                }
            }
            Expect::Baseline => {
                if scan()?.baseline {
                    Ok(())
                } else {
                    Err("last scan scored a dose".into())
                }
            }
            Expect::Weight(w) => {
                let got = scan()?.weight;
                if got == *w {
                    Ok(())
                } else {
                    Err(format!("got {got} g"))
                }
            }
            Expect::Pills(n) => {
                let got = self.device.container().pill_count;
                if got == *n {
                    Ok(())
                } else {
                    Err(format!("got {got}"))
                }
            }
            Expect::Step(lo, hi) => {
                let g = reads()?;
                for (i, w) in g.windows(2).enumerate() {
                    let drop = (w[0] - w[1]) * 10.0;
                    // compare in tenths so 4.5 is not lost to binary fractions
                    if !((lo * 10.0 - 1e-6)..=(hi * 10.0 + 1e-6)).contains(&drop) {
                        return Err(format!("drop {} between reads {} and {} is {:.1}", i + 1, i + 1, i + 2, drop / 10.0));
                    }
                }
                Ok(())
            }
            Expect::UnitWeight(lo, hi) => {
                let uw = estimate_unit_weight(&reads()?).map_err(|e| e.to_string())?;
                if (*lo - 1e-9..=*hi + 1e-9).contains(&uw) {
                    Ok(())
                } else {
                    Err(format!("estimated {uw:.2}"))
                }
            }
        }
    }
}

fn describe(v: Verdict) -> String {
    match v {
        Verdict::Correct => "correct".into(),
        Verdict::Insufficient(k) | Verdict::Exceed(k) | Verdict::Refill(k) => format!("{} {k}", v.name()),
    }
}

fn describe_expect(e: &Expect) -> String {
    match e {
        Expect::Doses(n) => format!("doses {n}"),
        Expect::Verdict(v) => format!("verdict {}", describe(*v)),
        Expect::Message(m) => format!("message {m:?}"),
        Expect::Baseline => "baseline".into(),
        Expect::Weight(w) => format!("weight {w}"),
        Expect::Pills(n) => format!("pills {n}"),
        Expect::Step(lo, hi) => format!("step in [{lo}, {hi}]"),
        Expect::UnitWeight(lo, hi) => format!("unit_weight in [{lo}, {hi}]"),
        Expect::Error(c) => format!("error {c}"),
    }
}

fn step_name(s: &Step) -> String {
    match s {
        Step::Open => "open".into(),
        Step::Close => "close".into(),
        Step::Remove(n) => format!("remove {n}"),
        Step::Refill(n) => format!("refill {n}"),
        Step::Advance(t) => format!("advance {t}"),
        Step::Scan => "scan".into(),
        Step::Read => "read".into(),
        Step::Dose(n) => format!("dose {n}"),
        Step::Expect(e) => format!("expect {}", describe_expect(e)),
    }
}

/// Runs a parsed script. A step that fails without a matching `expect
/// error` on the next step counts as a failure and stops the run.
/// Setup errors (bad config, unknown medicine) come back as `Err`.
pub fn run(script: &Script, catalog: &MedicineCatalog) -> Result<Report, String> {
    let mut config = script.config.clone();
    config.cell.rng_seed = script.seed;
    let device = DeviceState::new(&config).map_err(|e| e.to_string())?;
    let mut r = Runner {
        catalog,
        device,
        prescription: Prescription {
            medicine_id: String::new(),
            medicine_name: String::new(),
            unit_weight: 1.0,
            recommended_dose: 1,
            schedule: vec![],
        },
        session: Session::default(),
        settle: script.settle,
        last_scan: None,
        reads: Vec::new(),
    };
    r.prescription = r.prescribe(&script.medicine, script.unit_weight, script.dose).map_err(|(_, m)| m)?;

    let mut text = String::new();
    let (mut passed, mut failed) = (0, 0);
    let mut pending: Option<(usize, StepError)> = None;
    for (line, step) in &script.steps {
        let name = step_name(step);
        if let Step::Expect(e) = step {
            let outcome = r.check(e, pending.as_ref().map(|(_, err)| err));
            pending = None;
            match outcome {
                Ok(()) => {
                    passed += 1;
                    let _ = writeln!(text, "{line:>4}  {name} ... ok");
                }
                Err(why) => {
                    failed += 1;
                    let _ = writeln!(text, "{line:>4}  {name} ... FAILED: {why}");
                }
            }
            continue;
        }
        if let Some((at, (code, msg))) = pending.take() {
            failed += 1;
            let _ = writeln!(text, "{at:>4}  unexpected error {code}: {msg}; stopping");
            break;
        }
        match r.step(step) {
            Ok(out) => {
                let _ = writeln!(text, "{line:>4}  {name}: {out}");
            }
            Err(err) => {
                let _ = writeln!(text, "{line:>4}  {name}: error {}", err.0);
                pending = Some((*line, err));
            }
        }
    }
    if let Some((at, (code, msg))) = pending {
        failed += 1;
        let _ = writeln!(text, "{at:>4}  unexpected error {code}: {msg}");
    }
    let _ = writeln!(text, "{passed} passed, {failed} failed");
    Ok(Report { text, passed, failed })
}
