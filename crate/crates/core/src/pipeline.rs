//! The streaming engine: one instance per recording or live stream.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::ais::Population;
use crate::conditioning::Conditioner;
use crate::config::EngineConfig;
use crate::decision::{
    feedback, DecisionEvent, DecisionUnit, DetectorReport, EventKind, FeedbackOutcome, PredictorReport,
};
use crate::detector::{combined_likelihood, sync_matrix, DetectionState, DetectorOutput};
use crate::error::{Error, Result};
use crate::ingest::{windows, EegRecording, SlidingWindow};
use crate::par::Execution;
use crate::signature::{Signature, SignatureEncoder};

/// Acknowledgment of an accepted configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigAck {
    pub applied_version: u64,
    /// First window evaluated under the new configuration.
    pub effective_from_window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigChange {
    pub version: u64,
    pub from_window: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    /// Feed confirmed alarms back into the population.
    pub learning: bool,
    /// Run scheduled and streak-triggered mutation.
    pub mutation: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { learning: true, mutation: true }
    }
}

/// Everything the engine decided about one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub window_id: u64,
    pub start_s: f64,
    pub likelihood: f64,
    pub detector: DetectorOutput,
    pub prediction: PredictorReport,
    pub alarm_active: bool,
    pub event: Option<DecisionEvent>,
    pub mutation_fired: bool,
    pub feedback: Option<FeedbackOutcome>,
    pub config_version: u64,
    pub signature: Signature,
    pub artifact_flags: Vec<bool>,
    pub error_threshold: f64,
}

pub struct Engine {
    config: EngineConfig,
    pending: Option<EngineConfig>,
    sample_rate_hz: u32,
    conditioner: Conditioner,
    encoder: SignatureEncoder,
    detection: DetectionState,
    population: Population,
    decision: DecisionUnit,
    recent: VecDeque<Signature>,
    options: EngineOptions,
    next_window: u64,
    config_history: Vec<ConfigChange>,
}

const RECENT_CAP: usize = 64;

impl Engine {
    pub fn new(
        config: &EngineConfig,
        mut population: Population,
        sample_rate_hz: u32,
        channel_count: usize,
    ) -> Result<Self> {
        config.validate_for_rate(sample_rate_hz)?;
        population.params.tp = config.tp;
        Ok(Self {
            conditioner: Conditioner::new(config, sample_rate_hz, channel_count)?,
            encoder: SignatureEncoder::new(),
            detection: DetectionState::new(config.td, config.duration_required),
            population,
            decision: DecisionUnit::new(),
            recent: VecDeque::new(),
            options: EngineOptions::default(),
            next_window: 0,
            config_history: vec![ConfigChange { version: config.version, from_window: 0 }],
            config: config.clone(),
            pending: None,
            sample_rate_hz,
        })
    }

    pub fn with_options(mut self, options: EngineOptions) -> Self {
        self.options = options;
        self
    }

    /// Parallelizes per-channel conditioning.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.conditioner = self.conditioner.with_execution(exec);
        self.population = self.population.with_execution(exec);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// The most recently accepted configuration, which may not be active yet.
    pub fn latest_config(&self) -> &EngineConfig {
        self.pending.as_ref().unwrap_or(&self.config)
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn into_population(self) -> Population {
        self.population
    }

    pub fn config_history(&self) -> &[ConfigChange] {
        &self.config_history
    }

    pub fn next_window(&self) -> u64 {
        self.next_window
    }

    /// Validates `new_config` and schedules it for the next window boundary.
    /// The engine assigns the version; whatever `new_config.version` holds is
    /// ignored. On error the active configuration is untouched.
    pub fn apply_config(&mut self, new_config: &EngineConfig) -> Result<ConfigAck> {
        new_config.validate_for_rate(self.sample_rate_hz)?;
        let latest = self.latest_config().version;
        let mut cfg = new_config.clone();
        cfg.version = latest + 1;
        let ack = ConfigAck { applied_version: cfg.version, effective_from_window: self.next_window };
        self.pending = Some(cfg);
        Ok(ack)
    }

    fn adopt_pending(&mut self, window_id: u64) -> Result<()> {
        let Some(cfg) = self.pending.take() else {
            return Ok(());
        };
        self.conditioner.reconfigure(&cfg)?;
        self.detection.td = cfg.td;
        self.detection.duration_required = cfg.duration_required.max(1);
        self.population.params.tp = cfg.tp;
        self.config_history.push(ConfigChange { version: cfg.version, from_window: window_id });
        self.config = cfg;
        Ok(())
    }

    pub fn process_window(&mut self, window: &SlidingWindow) -> Result<WindowOutcome> {
        if window.window_id < self.next_window {
            return Err(Error::Validation(format!(
                "window {} arrived after window {}",
                window.window_id,
                self.next_window.saturating_sub(1)
            )));
        }
        self.adopt_pending(window.window_id)?;
        let id = window.window_id;
        let cw = self.conditioner.process(window)?;
        let signature = self.encoder.generate(&cw, &self.config)?;
        let likelihood = combined_likelihood(&sync_matrix(&cw)?)?;
        let detector = self.detection.detect(likelihood);

        let mut prediction = PredictorReport { window_id: id, score: 0.0, fired: false, winner: None };
        if let Ok(v) = signature.dequantize() {
            let m = self.population.match_vector(&v)?;
            prediction.score = m.score;
            prediction.winner = Some(m.winner);
            prediction.fired = m.fired;
            if m.fired {
                self.population.record_win(m.winner, v)?;
            } else {
                self.population.record_miss();
            }
        } else {
            self.population.record_miss();
        }
        let mutation_fired = self.options.mutation
            && self.population.mutation_tick(id, self.config.duration_required)?;
        self.population.tick_age();

        let det_report = DetectorReport { window_id: id, output: detector, likelihood };
        let event = self.decision.decide(&det_report, &prediction, window.start_s(), &signature, &self.config)?;

        let mut fb = None;
        if self.options.learning {
            if let Some(e) = event.as_ref().filter(|e| e.kind == EventKind::Alarm) {
                let back = self.config.duration_required as usize;
                let exemplar = self
                    .recent
                    .len()
                    .checked_sub(back)
                    .and_then(|i| self.recent.get(i))
                    .copied()
                    .unwrap_or(Signature::SENTINEL);
                fb = Some(feedback(e, &exemplar, &mut self.population)?);
            }
        }
        self.recent.push_back(signature);
        if self.recent.len() > RECENT_CAP {
            self.recent.pop_front();
        }
        self.next_window = id + 1;
        Ok(WindowOutcome {
            window_id: id,
            start_s: window.start_s(),
            likelihood,
            detector,
            prediction,
            alarm_active: self.decision.alarm_active,
            event,
            mutation_fired,
            feedback: fb,
            config_version: self.config.version,
            signature,
            artifact_flags: cw.artifact_flags.iter().map(|f| f.flagged).collect(),
            error_threshold: cw.error_threshold,
        })
    }
}

/// Result of replaying a whole recording through a fresh engine.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcomes: Vec<WindowOutcome>,
    pub population: Population,
}

impl RunResult {
    pub fn events(&self) -> Vec<DecisionEvent> {
        self.outcomes.iter().filter_map(|o| o.event.clone()).collect()
    }
}

pub fn run_recording(
    rec: &EegRecording,
    config: &EngineConfig,
    population: Population,
    options: EngineOptions,
) -> Result<RunResult> {
    let mut engine = Engine::new(config, population, rec.sample_rate_hz(), rec.channel_count())?
        .with_options(options)
        .with_execution(Execution::Sequential);
    let outcomes = windows(rec, config).map(|w| engine.process_window(&w)).collect::<Result<Vec<_>>>()?;
    Ok(RunResult { outcomes, population: engine.into_population() })
}

/// Signatures of every window, from a conditioning-only pass.
pub fn recording_signatures(rec: &EegRecording, config: &EngineConfig) -> Result<Vec<(SlidingWindowSpan, Signature)>> {
    let mut cond = Conditioner::new(config, rec.sample_rate_hz(), rec.channel_count())?;
    let mut enc = SignatureEncoder::new();
    windows(rec, config)
        .map(|w| {
            let cw = cond.process(&w)?;
            let sig = enc.generate(&cw, config)?;
            Ok((SlidingWindowSpan { window_id: w.window_id, start_s: w.start_s(), end_s: w.start_s() + w.duration_s() }, sig))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowSpan {
    pub window_id: u64,
    pub start_s: f64,
    pub end_s: f64,
}
