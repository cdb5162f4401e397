//! Fusion of detector and predictor outputs into WARN / ALARM / CLEAR events,
//! and the feedback path from confirmed alarms into the population.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ais::{AppendOutcome, Population};
use crate::config::EngineConfig;
use crate::detector::DetectorOutput;
use crate::error::{Error, Result};
use crate::signature::Signature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    Warn,
    Alarm,
    Clear,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Warn => "WARN",
            EventKind::Alarm => "ALARM",
            EventKind::Clear => "CLEAR",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WARN" => Ok(EventKind::Warn),
            "ALARM" => Ok(EventKind::Alarm),
            "CLEAR" => Ok(EventKind::Clear),
            other => Err(Error::Format(format!("unknown event kind `{other}`"))),
        }
    }
}

/// One line of the event log. Field order is part of the log format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    #[serde(rename = "ts")]
    pub timestamp_s: f64,
    pub window_id: u64,
    pub kind: EventKind,
    pub likelihood: f64,
    #[serde(rename = "score")]
    pub prediction_score: f64,
    pub signature_hex: String,
    pub config_version: u64,
}

impl DecisionEvent {
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn from_log_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad event record: {e}")))
    }
}

/// Detector verdict for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub window_id: u64,
    pub output: DetectorOutput,
    pub likelihood: f64,
}

/// Predictor verdict for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub window_id: u64,
    pub score: f64,
    pub fired: bool,
    pub winner: Option<usize>,
}

/// Alarm bookkeeping across windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionUnit {
    pub alarm_active: bool,
    quiet_windows: u32,
    last_window: Option<u64>,
}

impl DecisionUnit {
    pub fn new() -> Self {
        Self::default()
    }

    /// At most one event per window. An onset raises ALARM; a predictor fire
    /// raises WARN only while no alarm is active; an active alarm clears after
    /// `duration_required` quiet windows.
    pub fn decide(
        &mut self,
        det: &DetectorReport,
        pred: &PredictorReport,
        timestamp_s: f64,
        signature: &Signature,
        config: &EngineConfig,
    ) -> Result<Option<DecisionEvent>> {
        if det.window_id != pred.window_id {
            return Err(Error::Ordering { detector: det.window_id, predictor: pred.window_id });
        }
        if self.last_window.is_some_and(|w| det.window_id <= w) {
            return Err(Error::Validation(format!(
                "window {} arrived after window {}",
                det.window_id,
                self.last_window.unwrap_or_default()
            )));
        }
        self.last_window = Some(det.window_id);
        let kind = match det.output {
            DetectorOutput::Onset => {
                self.alarm_active = true;
                self.quiet_windows = 0;
                Some(EventKind::Alarm)
            }
            DetectorOutput::Ongoing => {
                self.quiet_windows = 0;
                None
            }
            DetectorOutput::None if self.alarm_active => {
                self.quiet_windows += 1;
                if self.quiet_windows >= config.duration_required {
                    self.alarm_active = false;
                    self.quiet_windows = 0;
                    Some(EventKind::Clear)
                } else {
                    None
                }
            }
            DetectorOutput::None => pred.fired.then_some(EventKind::Warn),
        };
        Ok(kind.map(|kind| DecisionEvent {
            timestamp_s,
            window_id: det.window_id,
            kind,
            likelihood: det.likelihood,
            prediction_score: pred.score,
            signature_hex: signature.to_hex(),
            config_version: config.version,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackOutcome {
    Promoted(usize),
    Appended { evicted: bool },
    RejectedSelf,
    /// Not an alarm, or the exemplar was a sentinel.
    Skipped,
}

/// Teaches the population from a confirmed alarm: a matching antibody is
/// promoted, otherwise `exemplar` joins the table.
pub fn feedback(event: &DecisionEvent, exemplar: &Signature, pop: &mut Population) -> Result<FeedbackOutcome> {
    if event.kind != EventKind::Alarm || exemplar.is_sentinel() {
        return Ok(FeedbackOutcome::Skipped);
    }
    let v = exemplar.dequantize()?;
    let m = pop.match_vector(&v)?;
    if m.fired {
        pop.promote(m.winner)?;
        pop.slt[0].last_antigen = Some(v);
        return Ok(FeedbackOutcome::Promoted(m.winner));
    }
    Ok(match pop.append_new(v) {
        AppendOutcome::Appended { evicted } => FeedbackOutcome::Appended { evicted },
        AppendOutcome::RejectedSelf => FeedbackOutcome::RejectedSelf,
    })
}

/// Append-only line-delimited event log.
pub struct EventLogWriter {
    file: File,
}

impl EventLogWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, event: &DecisionEvent) -> Result<()> {
        let mut line = event.to_log_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn render_log(events: &[DecisionEvent]) -> String {
    events.iter().map(|e| e.to_log_line() + "\n").collect()
}

pub fn read_log(path: &Path) -> Result<Vec<DecisionEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(DecisionEvent::from_log_line(&line)?);
        }
    }
    Ok(out)
}
