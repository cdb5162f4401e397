//! One engine per session, driven by a task that owns it. Everything else
//! talks to the task through its mailbox or reads the published log.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use preictal_core::ais::{AisParams, Population};
use preictal_core::decision::{DecisionEvent, EventLogWriter};
use preictal_core::eval::{synthetic_corpus, train_population, CorpusSpec};
use preictal_core::ingest::{generate_synthetic, load_recording, EegRecording, FileFormat, SlidingWindow, SynthSpec};
use preictal_core::par::Execution;
use preictal_core::pipeline::{ConfigChange, Engine};
use preictal_core::EngineConfig;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::Instant;

use crate::bundle::{ExportBundle, Manifest};
use crate::error::{Result, ServiceError};

/// Pacing of a file replay.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayRate {
    /// One window per window duration of wall-clock time.
    RealTime,
    /// `factor` times faster than real time.
    Speed { factor: f64 },
    /// As fast as the engine runs.
    #[default]
    Max,
}

impl ReplayRate {
    fn delay(self, window_s: f64) -> Option<Duration> {
        match self {
            ReplayRate::RealTime => Some(Duration::from_secs_f64(window_s)),
            ReplayRate::Speed { factor } if factor > 0.0 => Some(Duration::from_secs_f64(window_s / factor)),
            _ => None,
        }
    }
}

/// Where a session's samples come from. Also recorded in export manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    /// A recording file; `.bin`, `.raw` and `.eeg` are raw binary, anything else CSV.
    Replay {
        path: PathBuf,
        #[serde(default)]
        rate: ReplayRate,
    },
    /// A recording generated on the fly.
    Synthetic {
        spec: SynthSpec,
        #[serde(default)]
        rate: ReplayRate,
    },
    /// Samples pushed over HTTP.
    Live { sample_rate_hz: u32, channel_count: usize },
    /// A previous session's export bundle, republished as an ended session.
    Archive { path: PathBuf },
}

/// How the session's detector population is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    /// An AIS1 population bundle.
    Bundle { path: PathBuf },
    /// The population snapshot inside an EXB1 export bundle.
    Export { path: PathBuf },
    /// Trained from annotated recordings.
    Train {
        recordings: Vec<PathBuf>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        params: AisParams,
    },
    /// Trained on the training half of a seeded synthetic corpus.
    SyntheticCorpus {
        #[serde(default)]
        corpus: CorpusSpec,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub source: SourceSpec,
    #[serde(default)]
    pub config: EngineConfig,
    #[serde(default)]
    pub population: Option<PopulationSpec>,
    #[serde(default)]
    pub start_paused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
    Ended,
}

/// Reply to an accepted configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigAckReply {
    pub applied_version: u64,
    /// Last window evaluated under the previous configuration, if any.
    pub acked_at_window: Option<u64>,
    pub effective_from_window: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: RunState,
    pub source: SourceSpec,
    pub config: EngineConfig,
    pub config_history: Vec<ConfigChange>,
    pub windows_processed: u64,
    pub events: u64,
    pub event_log_path: PathBuf,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
struct Status {
    state: RunState,
    config: EngineConfig,
    config_history: Vec<ConfigChange>,
    windows_processed: u64,
    error: Option<String>,
}

/// Published event records, in window order.
#[derive(Debug, Default)]
pub struct Published {
    pub lines: Vec<String>,
    pub ended: bool,
}

pub struct Shared {
    pub log: RwLock<Published>,
    /// Bumped on every append and at the end of the session.
    pub notify: watch::Sender<u64>,
    status: Mutex<Status>,
    final_population: Mutex<Option<Population>>,
    pub event_log_path: PathBuf,
}

impl Shared {
    fn publish(&self, line: Option<String>, ended: bool) {
        {
            let mut log = self.log.write().expect("log lock");
            log.lines.extend(line);
            log.ended |= ended;
        }
        self.notify.send_modify(|n| *n += 1);
    }

    pub fn config(&self) -> EngineConfig {
        self.status.lock().expect("status lock").config.clone()
    }
}

enum Command {
    Config(serde_json::Map<String, serde_json::Value>, oneshot::Sender<Result<ConfigAckReply>>),
    SetState(RunState, oneshot::Sender<RunState>),
    Push(Vec<Vec<i16>>, oneshot::Sender<Result<usize>>),
    EndInput,
    Snapshot(oneshot::Sender<Population>),
}

pub struct Session {
    pub id: String,
    pub source: SourceSpec,
    pub shared: Arc<Shared>,
    tx: mpsc::UnboundedSender<Command>,
}

/// Pending samples and the cut position of the next window.
struct Cutter {
    channels: Vec<VecDeque<i16>>,
    consumed: usize,
    next_id: u64,
    input_closed: bool,
    sample_rate_hz: u32,
}

impl Cutter {
    fn new(samples: Vec<Vec<i16>>, sample_rate_hz: u32, input_closed: bool) -> Self {
        Self {
            channels: samples.into_iter().map(VecDeque::from).collect(),
            consumed: 0,
            next_id: 0,
            input_closed,
            sample_rate_hz,
        }
    }

    fn buffered(&self) -> usize {
        self.channels.first().map_or(0, VecDeque::len)
    }

    fn push(&mut self, block: Vec<Vec<i16>>) -> Result<usize> {
        if self.input_closed {
            return Err(ServiceError::Conflict("input already ended".into()));
        }
        if block.len() != self.channels.len() {
            return Err(ServiceError::BadRequest(format!(
                "pushed {} channels to a {}-channel session",
                block.len(),
                self.channels.len()
            )));
        }
        let len = block[0].len();
        if block.iter().any(|c| c.len() != len) {
            return Err(ServiceError::BadRequest("pushed channels differ in length".into()));
        }
        for (dst, src) in self.channels.iter_mut().zip(block) {
            dst.extend(src);
        }
        Ok(len)
    }

    /// The next window, if enough input is buffered or the input has ended.
    fn next(&mut self, config: &EngineConfig) -> Option<SlidingWindow> {
        let len = config.window_samples(self.sample_rate_hz);
        let available = self.buffered();
        if len == 0 || available == 0 || (available < len && !self.input_closed) {
            return None;
        }
        let take = available.min(len);
        let blocks = self.channels.iter_mut().map(|c| c.drain(..take).collect()).collect();
        let w = SlidingWindow::from_blocks(self.next_id, self.consumed, blocks, len, config.delta_shift, self.sample_rate_hz);
        self.consumed += take;
        self.next_id += 1;
        Some(w)
    }

    fn exhausted(&self) -> bool {
        self.input_closed && self.buffered() == 0
    }
}

struct Task {
    engine: Engine,
    cutter: Cutter,
    rate: ReplayRate,
    state: RunState,
    shared: Arc<Shared>,
    writer: EventLogWriter,
}

fn merge_config(base: &EngineConfig, patch: serde_json::Map<String, serde_json::Value>) -> Result<EngineConfig> {
    let mut value = serde_json::to_value(base).expect("config serializes");
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in patch {
        if !obj.contains_key(&k) {
            return Err(ServiceError::BadRequest(format!("unknown config key `{k}`")));
        }
        obj.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| ServiceError::BadRequest(format!("bad config: {e}")))
}

impl Task {
    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Config(patch, reply) => {
                let r = merge_config(self.engine.latest_config(), patch).and_then(|cfg| {
                    let ack = self.engine.apply_config(&cfg)?;
                    Ok(ConfigAckReply {
                        applied_version: ack.applied_version,
                        acked_at_window: ack.effective_from_window.checked_sub(1),
                        effective_from_window: ack.effective_from_window,
                    })
                });
                let _ = reply.send(r);
            }
            Command::SetState(s, reply) => {
                if s != RunState::Ended {
                    self.state = s;
                    self.shared.status.lock().expect("status lock").state = s;
                }
                let _ = reply.send(self.state);
            }
            Command::Push(block, reply) => {
                let _ = reply.send(self.cutter.push(block));
            }
            Command::EndInput => self.cutter.input_closed = true,
            Command::Snapshot(reply) => {
                let _ = reply.send(self.engine.population().clone());
            }
        }
    }

    fn step(&mut self, w: &SlidingWindow) -> preictal_core::Result<()> {
        let out = self.engine.process_window(w)?;
        if let Some(e) = &out.event {
            self.writer.append(e)?;
            self.shared.publish(Some(e.to_log_line()), false);
        }
        let mut st = self.shared.status.lock().expect("status lock");
        st.windows_processed += 1;
        st.config = self.engine.config().clone();
        st.config_history = self.engine.config_history().to_vec();
        Ok(())
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        let mut error = None;
        'main: loop {
            while let Ok(cmd) = rx.try_recv() {
                self.handle(cmd);
            }
            if self.cutter.exhausted() {
                break;
            }
            let window = match self.state {
                RunState::Running => self.cutter.next(self.engine.latest_config()),
                _ => None,
            };
            let Some(w) = window else {
                match rx.recv().await {
                    Some(cmd) => self.handle(cmd),
                    None => break,
                }
                continue;
            };
            if let Err(e) = self.step(&w) {
                tracing::warn!(session = ?self.shared.event_log_path, "session stopped: {e}");
                error = Some(e.to_string());
                break;
            }
            match self.rate.delay(w.duration_s()) {
                Some(d) => {
                    let deadline = Instant::now() + d;
                    loop {
                        tokio::select! {
                            _ = tokio::time::sleep_until(deadline) => break,
                            cmd = rx.recv() => match cmd {
                                Some(cmd) => self.handle(cmd),
                                None => break 'main,
                            },
                        }
                    }
                }
                None => tokio::task::yield_now().await,
            }
        }
        {
            let mut st = self.shared.status.lock().expect("status lock");
            st.state = RunState::Ended;
            st.error = error;
            st.config = self.engine.config().clone();
            st.config_history = self.engine.config_history().to_vec();
        }
        *self.shared.final_population.lock().expect("population lock") = Some(self.engine.into_population());
        self.shared.publish(None, true);
        rx.close();
        while let Ok(cmd) = rx.try_recv() {
            if let Command::Snapshot(reply) = cmd {
                let pop = self.shared.final_population.lock().expect("population lock").clone();
                let _ = reply.send(pop.expect("stored above"));
            }
        }
    }
}

fn load_population(spec: &PopulationSpec, config: &EngineConfig) -> Result<Population> {
    Ok(match spec {
        PopulationSpec::Bundle { path } => Population::load(path)
            .map_err(|e| ServiceError::BadRequest(format!("population bundle {} rejected: {e}", path.display())))?,
        PopulationSpec::Export { path } => ExportBundle::load(path)?.population,
        PopulationSpec::Train { recordings, seed, params } => {
            let recs = recordings.iter().map(|p| open_recording(p)).collect::<Result<Vec<_>>>()?;
            train_population(&recs, config, params, *seed, Execution::Parallel)?
        }
        PopulationSpec::SyntheticCorpus { corpus, seed } => {
            let spec = CorpusSpec { test_recordings: 0, ..corpus.clone() };
            let c = synthetic_corpus(&spec, Execution::Parallel)?;
            train_population(&c.train, config, &AisParams::default(), *seed, Execution::Parallel)?
        }
    })
}

fn open_recording(path: &Path) -> Result<EegRecording> {
    load_recording(path, FileFormat::from_path(path))
        .map_err(|e| ServiceError::BadRequest(format!("cannot open recording {}: {e}", path.display())))
}

impl Session {
    /// Builds the engine and starts the session task. Blocking work (file
    /// loading and training) runs on the blocking pool.
    pub async fn start(id: String, req: CreateSession, log_dir: &Path) -> Result<Arc<Session>> {
        let event_log_path = log_dir.join(format!("{id}.events.log"));
        if let SourceSpec::Archive { path } = &req.source {
            let path = path.clone();
            let bundle = tokio::task::spawn_blocking(move || ExportBundle::load(&path))
                .await
                .map_err(|e| ServiceError::Internal(e.to_string()))??;
            return Self::from_archive(id, req.source, bundle, event_log_path);
        }
        let pop_spec = req
            .population
            .clone()
            .ok_or_else(|| ServiceError::BadRequest("a population is required for this source".into()))?;
        let config = req.config.clone();
        let source = req.source.clone();
        let (engine, cutter, rate) = tokio::task::spawn_blocking(move || -> Result<_> {
            let (cutter, rate) = match &source {
                SourceSpec::Replay { path, rate } => {
                    let rec = open_recording(path)?;
                    (Cutter::new(rec.samples().to_vec(), rec.sample_rate_hz(), true), *rate)
                }
                SourceSpec::Synthetic { spec, rate } => {
                    let rec = generate_synthetic(spec)?;
                    (Cutter::new(rec.samples().to_vec(), rec.sample_rate_hz(), true), *rate)
                }
                SourceSpec::Live { sample_rate_hz, channel_count } => {
                    (Cutter::new(vec![Vec::new(); *channel_count], *sample_rate_hz, false), ReplayRate::Max)
                }
                SourceSpec::Archive { .. } => unreachable!("handled above"),
            };
            let pop = load_population(&pop_spec, &config)?;
            let engine = Engine::new(&config, pop, cutter.sample_rate_hz, cutter.channels.len())?
                .with_execution(Execution::Parallel);
            Ok((engine, cutter, rate))
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;

        let writer = EventLogWriter::open(&event_log_path)?;
        let state = if req.start_paused { RunState::Paused } else { RunState::Running };
        let shared = Arc::new(Shared {
            log: RwLock::new(Published::default()),
            notify: watch::channel(0).0,
            status: Mutex::new(Status {
                state,
                config: engine.config().clone(),
                config_history: engine.config_history().to_vec(),
                windows_processed: 0,
                error: None,
            }),
            final_population: Mutex::new(None),
            event_log_path,
        });
        let (tx, rx) = mpsc::unbounded_channel();
        let task = Task { engine, cutter, rate, state, shared: shared.clone(), writer };
        tokio::spawn(task.run(rx));
        tracing::info!(session = %id, "session started");
        Ok(Arc::new(Session { id, source: req.source, shared, tx }))
    }

    fn from_archive(id: String, source: SourceSpec, b: ExportBundle, event_log_path: PathBuf) -> Result<Arc<Session>> {
        let mut writer = EventLogWriter::open(&event_log_path)?;
        for e in &b.events {
            writer.append(e)?;
        }
        let shared = Arc::new(Shared {
            log: RwLock::new(Published { lines: b.events.iter().map(DecisionEvent::to_log_line).collect(), ended: true }),
            notify: watch::channel(0).0,
            status: Mutex::new(Status {
                state: RunState::Ended,
                config: b.manifest.config,
                config_history: b.manifest.config_history,
                windows_processed: b.manifest.windows_processed,
                error: None,
            }),
            final_population: Mutex::new(Some(b.population)),
            event_log_path,
        });
        // No task: every command is answered by the closed mailbox.
        let (tx, _) = mpsc::unbounded_channel();
        Ok(Arc::new(Session { id, source, shared, tx }))
    }

    fn ended() -> ServiceError {
        ServiceError::Conflict("session has ended".into())
    }

    pub fn view(&self) -> SessionView {
        let st = self.shared.status.lock().expect("status lock").clone();
        let events = self.shared.log.read().expect("log lock").lines.len() as u64;
        SessionView {
            session_id: self.id.clone(),
            state: st.state,
            source: self.source.clone(),
            config: st.config,
            config_history: st.config_history,
            windows_processed: st.windows_processed,
            events,
            event_log_path: self.shared.event_log_path.clone(),
            error: st.error,
        }
    }

    pub async fn update_config(&self, patch: serde_json::Map<String, serde_json::Value>) -> Result<ConfigAckReply> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Command::Config(patch, tx)).map_err(|_| Self::ended())?;
        rx.await.map_err(|_| Self::ended())?
    }

    pub async fn set_state(&self, state: RunState) -> Result<RunState> {
        if state == RunState::Ended {
            return Err(ServiceError::BadRequest("sessions end when their input ends".into()));
        }
        let (tx, rx) = oneshot::channel();
        self.tx.send(Command::SetState(state, tx)).map_err(|_| Self::ended())?;
        rx.await.map_err(|_| Self::ended())
    }

    pub async fn push(&self, block: Vec<Vec<i16>>) -> Result<usize> {
        if !matches!(self.source, SourceSpec::Live { .. }) {
            return Err(ServiceError::Conflict("only live sessions accept samples".into()));
        }
        let (tx, rx) = oneshot::channel();
        self.tx.send(Command::Push(block, tx)).map_err(|_| Self::ended())?;
        rx.await.map_err(|_| Self::ended())?
    }

    pub fn end_input(&self) -> Result<()> {
        if !matches!(self.source, SourceSpec::Live { .. }) {
            return Err(ServiceError::Conflict("only live sessions accept samples".into()));
        }
        self.tx.send(Command::EndInput).map_err(|_| Self::ended())
    }

    pub async fn population(&self) -> Result<Population> {
        if let Some(p) = self.shared.final_population.lock().expect("population lock").clone() {
            return Ok(p);
        }
        let (tx, rx) = oneshot::channel();
        if self.tx.send(Command::Snapshot(tx)).is_ok() {
            if let Ok(p) = rx.await {
                return Ok(p);
            }
        }
        self.shared
            .final_population
            .lock()
            .expect("population lock")
            .clone()
            .ok_or_else(|| ServiceError::Internal("population snapshot unavailable".into()))
    }

    pub async fn export(&self) -> Result<ExportBundle> {
        let population = self.population().await?;
        let view = self.view();
        let events = {
            let log = self.shared.log.read().expect("log lock");
            log.lines.iter().map(|l| DecisionEvent::from_log_line(l)).collect::<preictal_core::Result<Vec<_>>>()?
        };
        Ok(ExportBundle {
            manifest: Manifest {
                session_id: self.id.clone(),
                source: self.source.clone(),
                config: view.config,
                config_history: view.config_history,
                windows_processed: view.windows_processed,
            },
            events,
            population,
        })
    }
}
