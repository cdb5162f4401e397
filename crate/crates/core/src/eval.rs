//! Scoring, threshold sweeps, the random baseline and the synthetic corpus
//! protocol.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ais::{negative_selection_train_with, AisParams, Population};
use crate::config::EngineConfig;
use crate::decision::{DecisionEvent, EventKind};
use crate::error::{Error, Result};
use crate::ingest::{generate_synthetic, EegRecording, SeizureAnnotation, SeizureSpec, SynthSpec};
use crate::par::{self, Execution};
use crate::pipeline::{recording_signatures, run_recording, EngineOptions, WindowOutcome};
use crate::signature::SignatureVector;

/// Lead horizon within which a WARN is credited to the next onset.
pub const DEFAULT_HORIZON_S: f64 = 20.0;

/// Event-level score of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub seizures_annotated: usize,
    /// Onsets preceded by a credited WARN.
    pub predicted: usize,
    /// Onsets covered by at least one ALARM.
    pub detected: usize,
    pub false_warns: usize,
    pub false_alarms: usize,
    /// One lead per credited onset: onset minus earliest credited WARN.
    pub lead_times_s: Vec<f64>,
}

impl RunScore {
    pub fn mean_time_to_seizure_s(&self) -> Option<f64> {
        (!self.lead_times_s.is_empty())
            .then(|| self.lead_times_s.iter().sum::<f64>() / self.lead_times_s.len() as f64)
    }
}

/// Matches events against ground truth.
///
/// A WARN at `t` is a true prediction when an onset lies in `(t, t + horizon]`.
/// Each onset is credited once, to its earliest such WARN; later WARNs inside
/// the same horizon are neither true nor false. An ALARM is a true detection
/// when its timestamp lies inside an annotated interval.
pub fn score_run(events: &[DecisionEvent], truth: &[SeizureAnnotation], horizon_s: f64) -> Result<RunScore> {
    if !(horizon_s > 0.0) {
        return Err(Error::Validation(format!("horizon must be positive, got {horizon_s}")));
    }
    for pair in events.windows(2) {
        if pair[1].window_id < pair[0].window_id || pair[1].timestamp_s < pair[0].timestamp_s {
            return Err(Error::Validation(format!(
                "events out of order at window {}",
                pair[1].window_id
            )));
        }
    }
    let mut score = RunScore { seizures_annotated: truth.len(), ..RunScore::default() };
    let mut credited = vec![false; truth.len()];
    let mut detected = vec![false; truth.len()];
    for e in events {
        match e.kind {
            EventKind::Warn => {
                let mut in_horizon = false;
                for (i, a) in truth.iter().enumerate() {
                    if a.onset_s > e.timestamp_s && a.onset_s <= e.timestamp_s + horizon_s {
                        in_horizon = true;
                        if !credited[i] {
                            credited[i] = true;
                            score.lead_times_s.push(a.onset_s - e.timestamp_s);
                        }
                    }
                }
                if !in_horizon {
                    score.false_warns += 1;
                }
            }
            EventKind::Alarm => match truth.iter().position(|a| a.contains(e.timestamp_s)) {
                Some(i) => detected[i] = true,
                None => score.false_alarms += 1,
            },
            EventKind::Clear => {}
        }
    }
    score.predicted = credited.iter().filter(|c| **c).count();
    score.detected = detected.iter().filter(|d| **d).count();
    Ok(score)
}

/// Window-level confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, flagged: bool, positive: bool) {
        match (flagged, positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(mut self, other: Confusion) -> Self {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
        self
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Window length in seconds for a config at `rate_hz`.
pub fn window_seconds(config: &EngineConfig, rate_hz: u32) -> f64 {
    config.window_samples(rate_hz) as f64 / rate_hz as f64
}

/// Accuracy over windows: a window is positive when it overlaps
/// `[onset - horizon, offset]`, and flagged when it raised a WARN or an alarm
/// was active.
pub fn window_confusion(outcomes: &[WindowOutcome], truth: &[SeizureAnnotation], window_s: f64, horizon_s: f64) -> Confusion {
    let mut c = Confusion::default();
    for o in outcomes {
        let (s, e) = (o.start_s, o.start_s + window_s);
        let positive = truth.iter().any(|a| s < a.offset_s && e > a.onset_s - horizon_s);
        let warned = o.event.as_ref().is_some_and(|ev| ev.kind == EventKind::Warn);
        c.add(warned || o.alarm_active, positive);
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub seizures_annotated: usize,
    pub predicted: usize,
    pub detected: usize,
    pub mean_time_to_seizure_s: Option<f64>,
    pub false_warns: usize,
    pub false_alarms: usize,
    pub hours: f64,
    pub windows: Confusion,
}

impl ReportRow {
    pub fn from_score(name: &str, score: &RunScore, hours: f64, windows: Confusion) -> Self {
        Self {
            name: name.to_string(),
            seizures_annotated: score.seizures_annotated,
            predicted: score.predicted,
            detected: score.detected,
            mean_time_to_seizure_s: score.mean_time_to_seizure_s(),
            false_warns: score.false_warns,
            false_alarms: score.false_alarms,
            hours,
            windows,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Detected over annotated seizures.
    pub sensitivity: f64,
    /// Credited predictions over annotated seizures.
    pub prediction_sensitivity: f64,
    pub accuracy: f64,
    pub fpr_per_hour: f64,
    pub mean_lead_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub name: String,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: Aggregate,
    pub curves: Vec<SweepCurve>,
}

impl ExperimentReport {
    pub fn from_rows(rows: Vec<ReportRow>, leads: &[f64]) -> Self {
        let annotated: usize = rows.iter().map(|r| r.seizures_annotated).sum();
        let detected: usize = rows.iter().map(|r| r.detected).sum();
        let predicted: usize = rows.iter().map(|r| r.predicted).sum();
        let hours: f64 = rows.iter().map(|r| r.hours).sum();
        let false_events: usize = rows.iter().map(|r| r.false_warns + r.false_alarms).sum();
        let windows = rows.iter().fold(Confusion::default(), |acc, r| acc.merge(r.windows));
        let aggregate = Aggregate {
            sensitivity: ratio(detected, annotated),
            prediction_sensitivity: ratio(predicted, annotated),
            accuracy: windows.accuracy(),
            fpr_per_hour: if hours > 0.0 { false_events as f64 / hours } else { 0.0 },
            mean_lead_s: (!leads.is_empty()).then(|| leads.iter().sum::<f64>() / leads.len() as f64),
        };
        Self { rows, aggregate, curves: Vec::new() }
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>9} {:>8} {:>9} {:>7} {:>7}",
            "recording", "seizures", "predicted", "detected", "t-to-s s", "f.warn", "f.alarm"
        );
        for r in &self.rows {
            let tts = r.mean_time_to_seizure_s.map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>9} {:>8} {:>9} {:>7} {:>7}",
                r.name, r.seizures_annotated, r.predicted, r.detected, tts, r.false_warns, r.false_alarms
            );
        }
        let a = &self.aggregate;
        let lead = a.mean_lead_s.map_or("-".to_string(), |v| format!("{v:.2} s"));
        let _ = writeln!(
            s,
            "sensitivity {:.3}  prediction sensitivity {:.3}  accuracy {:.3}  false events/h {:.2}  mean lead {lead}",
            a.sensitivity, a.prediction_sensitivity, a.accuracy, a.fpr_per_hour
        );
        s
    }

    /// One JSON record per row, then the aggregate.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s += &serde_json::to_string(r).expect("row serializes");
            s.push('\n');
        }
        s += &serde_json::to_string(&self.aggregate).expect("aggregate serializes");
        s.push('\n');
        s
    }
}

pub fn curve_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

/// Trapezoidal area under the ROC polyline through `(0,0)`, the points in
/// order of increasing fpr, and `(1,1)`.
pub fn roc_auc(points: &[SweepPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Which decision stage a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepTarget {
    /// Vary `td`; a window is flagged when its likelihood exceeds it and is
    /// positive when its midpoint lies inside a seizure.
    Detection,
    /// Vary `tp`; a window is flagged when the predictor fires and is
    /// positive when its midpoint lies in the horizon before an onset.
    Prediction,
}

fn window_positive(target: SweepTarget, mid: f64, truth: &[SeizureAnnotation], horizon_s: f64) -> bool {
    match target {
        SweepTarget::Detection => truth.iter().any(|a| a.contains(mid)),
        SweepTarget::Prediction => truth.iter().any(|a| mid > a.onset_s - horizon_s && mid <= a.onset_s),
    }
}

fn sweep_confusion(
    target: SweepTarget,
    outcomes: &[WindowOutcome],
    truth: &[SeizureAnnotation],
    window_s: f64,
    horizon_s: f64,
    threshold: f64,
) -> Confusion {
    let mut c = Confusion::default();
    for o in outcomes {
        let flagged = match target {
            SweepTarget::Detection => o.likelihood > threshold,
            SweepTarget::Prediction => o.prediction.fired,
        };
        c.add(flagged, window_positive(target, o.start_s + window_s / 2.0, truth, horizon_s));
    }
    c
}

/// Runs the full pipeline once per grid value and recording, pooling window
/// counts per grid value.
pub fn threshold_sweep(
    recordings: &[EegRecording],
    config: &EngineConfig,
    population: &Population,
    grid: &[f64],
    target: SweepTarget,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Validation("sweep grid is empty".into()));
    }
    let jobs: Vec<(f64, usize)> =
        grid.iter().flat_map(|&t| (0..recordings.len()).map(move |r| (t, r))).collect();
    let results = par::map(exec, &jobs, |&(t, r)| -> Result<Confusion> {
        let rec = &recordings[r];
        let mut cfg = config.clone();
        match target {
            SweepTarget::Detection => cfg.td = t,
            SweepTarget::Prediction => cfg.tp = t,
        }
        // The pipeline rejects thresholds at the ends of the unit interval;
        // run it inside the range and apply the extreme value afterwards.
        let run_cfg = EngineConfig {
            td: cfg.td.clamp(1e-9, 1.0 - 1e-9),
            tp: cfg.tp.clamp(1e-9, 1.0 - 1e-9),
            ..cfg
        };
        let run = run_recording(rec, &run_cfg, population.clone(), EngineOptions::default())?;
        let ws = window_seconds(config, rec.sample_rate_hz());
        Ok(sweep_confusion(target, &run.outcomes, rec.annotations(), ws, DEFAULT_HORIZON_S, t))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &t)| {
            let c = results[g * recordings.len()..(g + 1) * recordings.len()]
                .iter()
                .fold(Confusion::default(), |acc, c| acc.merge(*c));
            SweepPoint { threshold: t, fpr: c.fpr(), tpr: c.tpr() }
        })
        .collect())
}

/// Output of the random-guess predictor on one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub events: Vec<DecisionEvent>,
    /// Per-window fire decision.
    pub flags: Vec<bool>,
    pub row: ReportRow,
}

/// Emits a WARN in each window independently with probability `fire_rate`.
pub fn random_baseline(
    rec: &EegRecording,
    config: &EngineConfig,
    fire_rate: f64,
    seed: u64,
    horizon_s: f64,
) -> Result<BaselineRun> {
    if !(0.0..=1.0).contains(&fire_rate) {
        return Err(Error::Validation(format!("fire rate {fire_rate} outside [0, 1]")));
    }
    let rate = rec.sample_rate_hz();
    let ws = window_seconds(config, rate);
    let n = rec.len().div_ceil(config.window_samples(rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flags: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < fire_rate).collect();
    let events: Vec<DecisionEvent> = flags
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| DecisionEvent {
            timestamp_s: i as f64 * ws,
            window_id: i as u64,
            kind: EventKind::Warn,
            likelihood: 0.0,
            prediction_score: fire_rate,
            signature_hex: String::new(),
            config_version: config.version,
        })
        .collect();
    let score = score_run(&events, rec.annotations(), horizon_s)?;
    let mut windows = Confusion::default();
    for (i, &f) in flags.iter().enumerate() {
        let s = i as f64 * ws;
        let positive = rec.annotations().iter().any(|a| s < a.offset_s && s + ws > a.onset_s - horizon_s);
        windows.add(f, positive);
    }
    let row = ReportRow::from_score("random", &score, rec.duration_s() / 3600.0, windows);
    Ok(BaselineRun { events, flags, row })
}

/// ROC of the random baseline against the same window labels as a sweep.
pub fn baseline_sweep(
    recordings: &[EegRecording],
    config: &EngineConfig,
    rates: &[f64],
    seed: u64,
    target: SweepTarget,
) -> Result<Vec<SweepPoint>> {
    rates
        .iter()
        .map(|&rate| {
            let mut c = Confusion::default();
            for (r, rec) in recordings.iter().enumerate() {
                let run = random_baseline(rec, config, rate, seed.wrapping_add(r as u64 * 7919), DEFAULT_HORIZON_S)?;
                let ws = window_seconds(config, rec.sample_rate_hz());
                for (i, &f) in run.flags.iter().enumerate() {
                    let mid = i as f64 * ws + ws / 2.0;
                    c.add(f, window_positive(target, mid, rec.annotations(), DEFAULT_HORIZON_S));
                }
            }
            Ok(SweepPoint { threshold: rate, fpr: c.fpr(), tpr: c.tpr() })
        })
        .collect()
}

/// Layout of the seeded synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub train_recordings: usize,
    pub test_recordings: usize,
    pub duration_s: f64,
    pub seizure_duration_s: f64,
    /// Onsets are drawn uniformly from this range.
    pub onset_range_s: (f64, f64),
    pub preictal_lead_s: f64,
    pub artifact_bursts: usize,
    pub channel_count: usize,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train_recordings: 8,
            test_recordings: 10,
            duration_s: 300.0,
            seizure_duration_s: 40.0,
            onset_range_s: (120.0, 200.0),
            preictal_lead_s: 14.0,
            artifact_bursts: 2,
            channel_count: 4,
            sample_rate_hz: 250,
            seed: 2024,
        }
    }
}

pub struct Corpus {
    pub train: Vec<EegRecording>,
    pub test: Vec<EegRecording>,
}

pub fn synthetic_corpus(spec: &CorpusSpec, exec: Execution) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.train_recordings + spec.test_recordings;
    let specs: Vec<SynthSpec> = (0..total)
        .map(|i| {
            let (lo, hi) = spec.onset_range_s;
            let onset = (rng.random_range(lo..=hi) * 4.0).round() / 4.0;
            SynthSpec {
                channel_count: spec.channel_count,
                sample_rate_hz: spec.sample_rate_hz,
                duration_s: spec.duration_s,
                seizures: vec![SeizureSpec::new(onset, spec.seizure_duration_s)],
                preictal_lead_s: spec.preictal_lead_s,
                artifact_bursts: spec.artifact_bursts,
                seed: rng.random::<u64>() ^ i as u64,
                ..SynthSpec::default()
            }
        })
        .collect();
    let mut recs = par::map(exec, &specs, generate_synthetic).into_iter().collect::<Result<Vec<_>>>()?;
    let test = recs.split_off(spec.train_recordings);
    Ok(Corpus { train: recs, test })
}

/// Inter-ictal exemplars: signatures of windows that stay clear of every
/// seizure, its lead horizon and a post-ictal margin.
pub fn self_exemplars(rec: &EegRecording, config: &EngineConfig, horizon_s: f64) -> Result<Vec<SignatureVector>> {
    const POST_ICTAL_MARGIN_S: f64 = 20.0;
    let sigs = recording_signatures(rec, config)?;
    Ok(sigs
        .into_iter()
        .filter(|(span, _)| {
            rec.annotations()
                .iter()
                .all(|a| span.end_s <= a.onset_s - horizon_s || span.start_s >= a.offset_s + POST_ICTAL_MARGIN_S)
        })
        .filter_map(|(_, s)| s.dequantize().ok())
        .collect())
}

/// Negative selection on the training recordings' inter-ictal windows, then
/// one learning pass over the same recordings with alarm feedback enabled.
pub fn train_population(
    recordings: &[EegRecording],
    config: &EngineConfig,
    params: &AisParams,
    seed: u64,
    exec: Execution,
) -> Result<Population> {
    let per_rec = par::map(exec, recordings, |r| self_exemplars(r, config, DEFAULT_HORIZON_S));
    let mut self_set = Vec::new();
    for s in per_rec {
        self_set.extend(s?);
    }
    let mut params = params.clone();
    params.tp = config.tp;
    let mut pop = negative_selection_train_with(&self_set, &params, seed, exec)?;
    for rec in recordings {
        pop = run_recording(rec, config, pop, EngineOptions::default())?.population;
    }
    Ok(pop)
}

/// Replays every recording through its own copy of `population` and scores
/// it.
pub fn evaluate_recordings(
    recordings: &[EegRecording],
    config: &EngineConfig,
    population: &Population,
    horizon_s: f64,
    exec: Execution,
) -> Result<ExperimentReport> {
    let runs = par::map(exec, recordings, |rec| -> Result<(ReportRow, Vec<f64>)> {
        let run = run_recording(rec, config, population.clone(), EngineOptions::default())?;
        let score = score_run(&run.events(), rec.annotations(), horizon_s)?;
        let ws = window_seconds(config, rec.sample_rate_hz());
        let windows = window_confusion(&run.outcomes, rec.annotations(), ws, horizon_s);
        let name = rec.subject_meta.get("seed").map_or("recording".to_string(), |s| format!("seed-{s}"));
        Ok((ReportRow::from_score(&name, &score, rec.duration_s() / 3600.0, windows), score.lead_times_s))
    });
    let mut rows = Vec::new();
    let mut leads = Vec::new();
    for r in runs {
        let (row, l) = r?;
        rows.push(row);
        leads.extend(l);
    }
    Ok(ExperimentReport::from_rows(rows, &leads))
}
