//! Live operation of the twin against a streamed feed.
//!
//! A [`LiveTwin`] owns the twin. Ingested records are applied as they
//! arrive and the virtual clock follows the stream. On every tick the
//! scheduler runs on the current state, its decisions are validated, and
//! one [`DecisionRecord`] per decision goes to the record sink. All twin
//! log entries are appended to a persisted log, which doubles as the
//! recovery mechanism: [`LiveTwin::resume`] replays it.

mod http;
mod store;

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::http::QueryServer;
pub use self::store::{load_log, LogStore, PersistedLog, StoreError, STORE_VERSION};
use crate::engine::{step, EngineConfig, StepOutcome};
use crate::scheduler::{Decision, Scheduler};
use crate::twin::{
    Action, LogEntry, Millis, Outcome, Phase, ScenarioEvent, Terminal, Topology, TwinError, TwinState,
    ACTOR_INGEST, ACTOR_MANAGER,
};

/// Latest published twin; `None` until the live twin is initialised.
pub type SharedSnapshot = Arc<RwLock<Option<Arc<TwinState>>>>;

/// One line of the ingest stream.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestRecord {
    Event(ScenarioEvent),
    Heartbeat { t: Millis },
}

impl IngestRecord {
    pub fn t(&self) -> Millis {
        match self {
            IngestRecord::Event(e) => e.t,
            IngestRecord::Heartbeat { t } => *t,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeartbeatWire {
    #[allow(dead_code)]
    kind: String,
    t: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Parse,
    Ordering,
    DanglingId,
    /// Well-formed but violating a payload invariant (e.g. a repeated job id).
    Invalid,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Parse => "parse",
            RejectReason::Ordering => "ordering",
            RejectReason::DanglingId => "dangling-id",
            RejectReason::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Applied,
    Rejected(RejectReason),
}

pub fn parse_ingest_line(line: &str) -> Result<IngestRecord, RejectReason> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|_| RejectReason::Parse)?;
    if value.get("kind").and_then(|k| k.as_str()) == Some("heartbeat") {
        let hb: HeartbeatWire = serde_json::from_value(value).map_err(|_| RejectReason::Parse)?;
        return Ok(IngestRecord::Heartbeat { t: hb.t });
    }
    serde_json::from_value(value)
        .map(IngestRecord::Event)
        .map_err(|_| RejectReason::Parse)
}

/// What the sink receives for every emitted decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Wall-clock milliseconds since the Unix epoch.
    pub wall_ms: u64,
    pub t: Millis,
    pub decision: Decision,
    pub outcome: Outcome,
    pub scheduler: String,
}

/// Destination of decision records; the seam for an orchestrator adapter.
pub trait RecordSink: Send {
    fn write(&mut self, record: &DecisionRecord) -> io::Result<()>;
}

/// Writes records as NDJSON and flushes after each one.
pub struct WriterSink<W: Write + Send>(pub W);

impl<W: Write + Send> RecordSink for WriterSink<W> {
    fn write(&mut self, record: &DecisionRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.0.write_all(&line)?;
        self.0.flush()
    }
}

/// Collects records in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(pub Arc<Mutex<Vec<DecisionRecord>>>);

impl MemorySink {
    pub fn records(&self) -> Vec<DecisionRecord> {
        self.0.lock().expect("sink lock").clone()
    }
}

impl RecordSink for MemorySink {
    fn write(&mut self, record: &DecisionRecord) -> io::Result<()> {
        self.0.lock().expect("sink lock").push(record.clone());
        Ok(())
    }
}

/// Discards records.
pub struct NullSink;

impl RecordSink for NullSink {
    fn write(&mut self, _: &DecisionRecord) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the first retry; doubles for each further retry.
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 4,
            backoff: Duration::from_millis(25),
        }
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("record sink failed after {attempts} attempts: {source}")]
    SinkFailed { attempts: u32, source: io::Error },
    #[error("live twin has halted")]
    Halted,
}

/// Counters of one live session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LiveStats {
    pub applied: u64,
    pub rejected: u64,
    pub ticks: u64,
    pub records: u64,
}

pub struct LiveTwin {
    state: TwinState,
    scheduler: Box<dyn Scheduler>,
    sink: Box<dyn RecordSink>,
    store: Option<LogStore>,
    /// Log entries already handed to the store.
    persisted: usize,
    shared: SharedSnapshot,
    engine: EngineConfig,
    retry: RetryPolicy,
    halted: bool,
    stats: LiveStats,
}

impl LiveTwin {
    pub fn new(topology: Topology, scheduler: Box<dyn Scheduler>, sink: Box<dyn RecordSink>) -> Result<Self, ManagerError> {
        Ok(Self::from_state(TwinState::new(topology)?, scheduler, sink))
    }

    fn from_state(state: TwinState, scheduler: Box<dyn Scheduler>, sink: Box<dyn RecordSink>) -> Self {
        let persisted = state.event_log().len();
        let twin = Self {
            state,
            scheduler,
            sink,
            store: None,
            persisted,
            shared: Arc::new(RwLock::new(None)),
            engine: EngineConfig::default(),
            retry: RetryPolicy::default(),
            halted: false,
            stats: LiveStats::default(),
        };
        twin.publish();
        twin
    }

    /// Starts a fresh persisted log at `path`.
    pub fn persist_to(mut self, path: &Path) -> Result<Self, ManagerError> {
        let mut store = LogStore::create(path, self.state.topology())?;
        store.append(self.state.event_log())?;
        self.persisted = self.state.event_log().len();
        self.store = Some(store);
        Ok(self)
    }

    /// Restarts from a persisted log: replays it over its topology and
    /// keeps appending to it.
    pub fn resume(path: &Path, scheduler: Box<dyn Scheduler>, sink: Box<dyn RecordSink>) -> Result<Self, ManagerError> {
        let (store, log) = LogStore::reopen(path)?;
        let state = TwinState::replay(log.topology, &log.entries)?;
        let mut twin = Self::from_state(state, scheduler, sink);
        twin.store = Some(store);
        Ok(twin)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_engine_config(mut self, engine: EngineConfig) -> Self {
        self.engine = engine;
        self
    }

    /// Handle for query readers; shares the published snapshots.
    pub fn shared(&self) -> SharedSnapshot {
        Arc::clone(&self.shared)
    }

    /// Publishes into an externally created handle, e.g. one a query
    /// server already serves.
    pub fn attach(&mut self, shared: SharedSnapshot) {
        self.shared = shared;
        self.publish();
    }

    pub fn state(&self) -> &TwinState {
        &self.state
    }

    pub fn stats(&self) -> LiveStats {
        self.stats
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    fn publish(&self) {
        let snapshot = Arc::new(self.state.snapshot());
        *self.shared.write().expect("snapshot lock") = Some(snapshot);
    }

    /// Processes internal transitions strictly before `t` (or up to and
    /// including it when `inclusive`).
    fn settle(&mut self, t: Millis, inclusive: bool) -> Result<(), TwinError> {
        while let Some(next) = self.state.next_internal_time() {
            if next > t || (next == t && !inclusive) {
                break;
            }
            self.state.advance_clock(next)?;
            for id in self.state.transitions_at(next) {
                match self.state.job(&id).map(|j| j.phase) {
                    Some(Phase::Transferring) => self.state.finish_transfer(&id, ACTOR_MANAGER)?,
                    Some(Phase::Running) => self.state.release_job(&id, Terminal::Completed, ACTOR_MANAGER)?,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn ingest_line(&mut self, line: &str) -> IngestOutcome {
        match parse_ingest_line(line) {
            Ok(record) => self.ingest(record),
            Err(reason) => self.reject(reason, line),
        }
    }

    fn reject(&mut self, reason: RejectReason, what: &str) -> IngestOutcome {
        log::warn!("rejected ingest record ({}): {}", reason.as_str(), what.trim());
        self.stats.rejected += 1;
        IngestOutcome::Rejected(reason)
    }

    pub fn ingest(&mut self, record: IngestRecord) -> IngestOutcome {
        if self.halted {
            return self.reject(RejectReason::Ordering, "live twin has halted");
        }
        let t = record.t();
        if t < self.state.clock() {
            return self.reject(RejectReason::Ordering, &format!("record at {t} ms, clock at {} ms", self.state.clock()));
        }
        if let Err(e) = self.settle(t, false) {
            return self.reject(RejectReason::Invalid, &e.to_string());
        }
        let result = match &record {
            IngestRecord::Event(event) => self.state.apply_event(event, ACTOR_INGEST),
            IngestRecord::Heartbeat { t } => self.state.advance_clock(*t).map(|()| {
                self.state.record(LogEntry::new(*t, ACTOR_INGEST, Action::Heartbeat));
            }),
        };
        match result {
            Ok(()) => {
                self.stats.applied += 1;
                IngestOutcome::Applied
            }
            Err(e) => {
                let reason = match e {
                    TwinError::TimeRegression { .. } => RejectReason::Ordering,
                    TwinError::UnknownNode(_) | TwinError::UnknownLink(..) | TwinError::UnknownJob(_) => {
                        RejectReason::DanglingId
                    }
                    _ => RejectReason::Invalid,
                };
                self.reject(reason, &e.to_string())
            }
        }
    }

    /// Appends unpersisted log entries to the store and publishes.
    pub fn flush(&mut self) -> Result<(), ManagerError> {
        if let Some(store) = &mut self.store {
            store.append(&self.state.event_log()[self.persisted..])?;
        }
        self.persisted = self.state.event_log().len();
        self.publish();
        Ok(())
    }

    /// One scheduling round at the current virtual time.
    pub fn tick(&mut self) -> Result<StepOutcome, ManagerError> {
        if self.halted {
            return Err(ManagerError::Halted);
        }
        let now = self.state.clock();
        self.settle(now, true)?;
        let outcome = step(&mut self.state, self.scheduler.as_mut(), &self.engine);
        self.stats.ticks += 1;
        let scheduler = self.scheduler.name().to_string();
        for (decision, result) in &outcome.decisions {
            let record = DecisionRecord {
                wall_ms: wall_ms(),
                t: now,
                decision: decision.clone(),
                outcome: result.clone(),
                scheduler: scheduler.clone(),
            };
            if let Err(source) = self.write_with_retry(&record) {
                self.halt("sink-failure")?;
                return Err(ManagerError::SinkFailed {
                    attempts: self.retry.attempts,
                    source,
                });
            }
            self.stats.records += 1;
        }
        self.flush()?;
        Ok(outcome)
    }

    fn write_with_retry(&mut self, record: &DecisionRecord) -> io::Result<()> {
        let mut delay = self.retry.backoff;
        let mut attempt = 1;
        loop {
            match self.sink.write(record) {
                Ok(()) => return Ok(()),
                Err(e) if attempt >= self.retry.attempts.max(1) => return Err(e),
                Err(e) => {
                    log::warn!("record sink write failed (attempt {attempt}): {e}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }

    fn halt(&mut self, reason: &str) -> Result<(), ManagerError> {
        let t = self.state.clock();
        let entry = LogEntry::new(t, ACTOR_MANAGER, Action::Shutdown);
        self.state.record(if reason.is_empty() { entry } else { entry.rejected(reason) });
        self.halted = true;
        self.flush()
    }

    /// Stops cleanly: appends the terminal shutdown record.
    pub fn shutdown(mut self) -> Result<TwinState, ManagerError> {
        if !self.halted {
            self.halt("")?;
        }
        Ok(self.state)
    }
}

fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Reads lines on a background thread. The channel closes at end of input.
pub fn spawn_line_reader<R: BufRead + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::Builder::new()
        .name("ingest-reader".into())
        .spawn(move || {
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        })
        .expect("spawn ingest reader");
    rx
}

/// Drives `twin` from `lines`: records are applied as they arrive, in
/// batches persisted together, and the scheduler ticks every `cadence` of
/// wall time. Returns at end of input (after a final tick) or when `stop`
/// is set; the twin is left running so the caller decides how to close it.
pub fn run_live_loop(
    twin: &mut LiveTwin,
    lines: &Receiver<io::Result<String>>,
    cadence: Duration,
    stop: &AtomicBool,
) -> Result<LiveStats, ManagerError> {
    let mut next_tick = Instant::now() + cadence;
    while !stop.load(Ordering::Relaxed) {
        let wait = next_tick.saturating_duration_since(Instant::now()).min(Duration::from_millis(100));
        match lines.recv_timeout(wait) {
            Ok(first) => {
                let mut line = Some(first);
                while let Some(l) = line.take() {
                    match l {
                        Ok(text) if text.trim().is_empty() => {}
                        Ok(text) => {
                            twin.ingest_line(&text);
                        }
                        Err(e) => log::warn!("ingest read error: {e}"),
                    }
                    line = lines.try_recv().ok();
                }
                twin.flush()?;
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                twin.tick()?;
                break;
            }
        }
        if Instant::now() >= next_tick {
            twin.tick()?;
            next_tick += cadence;
        }
    }
    Ok(twin.stats())
}

#[cfg(test)]
mod tests;
