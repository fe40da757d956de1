//! Adapter for out-of-process schedulers speaking newline-delimited JSON.
//!
//! ```text
//! host  → {"type":"hello","protocol":1}
//! agent → {"type":"hello","protocol":1}
//! host  → {"type":"decide","snapshot":{…}}
//! agent → {"type":"decisions","decisions":[{"kind":"place","job":"j1","node":"n1"}, …]}
//! ```
//!
//! A reply that misses the deadline or does not parse is a fault: every
//! queued job is delayed for that round. Replies that arrive after their
//! deadline are discarded when they eventually show up.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{queue_order, Decision, Scheduler};
use crate::twin::TwinState;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_AGENT_DEADLINE: Duration = Duration::from_millis(1000);

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("agent speaks protocol {got}, host expects {expected}")]
    ProtocolMismatch { expected: u32, got: u32 },
    #[error("agent did not answer within {0:?}")]
    Timeout(Duration),
    #[error("malformed agent message: {0}")]
    Malformed(String),
    #[error("agent closed the connection")]
    Closed,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum HostMessage<'a> {
    Hello { protocol: u32 },
    Decide { snapshot: &'a TwinState },
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum AgentMessage {
    Hello { protocol: u32 },
    Decisions { decisions: Vec<Decision> },
}

pub struct AgentScheduler {
    name: String,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    deadline: Duration,
    /// Requests whose reply has not been consumed yet.
    stale: usize,
    faults: Vec<String>,
    total_faults: u64,
    child: Option<Child>,
}

impl std::fmt::Debug for AgentScheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentScheduler")
            .field("name", &self.name)
            .field("deadline", &self.deadline)
            .field("total_faults", &self.total_faults)
            .finish_non_exhaustive()
    }
}

impl AgentScheduler {
    /// Wraps an established byte stream and performs the handshake.
    pub fn from_streams<R, W>(name: impl Into<String>, reader: R, writer: W, deadline: Duration) -> Result<Self, AgentError>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("agent-reader".into())
            .spawn(move || {
                for line in BufReader::new(reader).lines() {
                    let stop = line.is_err();
                    if tx.send(line).is_err() || stop {
                        break;
                    }
                }
            })?;
        let mut agent = Self {
            name: name.into(),
            writer: Box::new(writer),
            lines: rx,
            deadline,
            stale: 0,
            faults: Vec::new(),
            total_faults: 0,
            child: None,
        };
        agent.handshake()?;
        Ok(agent)
    }

    /// Spawns `command` and talks to it over its stdin/stdout.
    pub fn spawn(name: impl Into<String>, command: &mut Command, deadline: Duration) -> Result<Self, AgentError> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::from_streams(name, stdout, stdin, deadline) {
            Ok(mut agent) => {
                agent.child = Some(child);
                Ok(agent)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn connect(name: impl Into<String>, addr: impl ToSocketAddrs, deadline: Duration) -> Result<Self, AgentError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::from_streams(name, reader, stream, deadline)
    }

    /// Changes the per-decision reply deadline.
    pub fn set_deadline(&mut self, deadline: Duration) {
        self.deadline = deadline;
    }

    /// Faults recorded over the adapter's lifetime.
    pub fn total_faults(&self) -> u64 {
        self.total_faults
    }

    fn send(&mut self, msg: &HostMessage<'_>) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(msg).map_err(std::io::Error::other)?;
        line.push(b'\n');
        self.writer.write_all(&line)?;
        self.writer.flush()
    }

    /// Next reply line before `until`, skipping replies to requests that
    /// already timed out.
    fn receive(&mut self, until: Instant) -> Result<String, AgentError> {
        loop {
            let wait = until.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(wait) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) if self.stale > 0 => {
                    self.stale -= 1;
                    drop(line);
                }
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(AgentError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(AgentError::Timeout(self.deadline)),
                Err(RecvTimeoutError::Disconnected) => return Err(AgentError::Closed),
            }
        }
    }

    fn handshake(&mut self) -> Result<(), AgentError> {
        self.send(&HostMessage::Hello {
            protocol: PROTOCOL_VERSION,
        })?;
        let line = self.receive(Instant::now() + self.deadline)?;
        match serde_json::from_str::<AgentMessage>(&line) {
            Ok(AgentMessage::Hello { protocol }) if protocol == PROTOCOL_VERSION => Ok(()),
            Ok(AgentMessage::Hello { protocol }) => Err(AgentError::ProtocolMismatch {
                expected: PROTOCOL_VERSION,
                got: protocol,
            }),
            Ok(_) => Err(AgentError::Malformed("expected hello".into())),
            Err(e) => Err(AgentError::Malformed(e.to_string())),
        }
    }

    fn round(&mut self, snapshot: &TwinState) -> Result<Vec<Decision>, AgentError> {
        self.send(&HostMessage::Decide { snapshot })?;
        match self.receive(Instant::now() + self.deadline) {
            Ok(line) => match serde_json::from_str::<AgentMessage>(&line) {
                Ok(AgentMessage::Decisions { decisions }) => Ok(decisions),
                Ok(_) => Err(AgentError::Malformed("expected decisions".into())),
                Err(e) => Err(AgentError::Malformed(e.to_string())),
            },
            Err(e @ AgentError::Timeout(_)) => {
                self.stale += 1;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }
}

impl Scheduler for AgentScheduler {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, snapshot: &TwinState) -> Vec<Decision> {
        match self.round(snapshot) {
            Ok(decisions) => decisions,
            Err(e) => {
                log::warn!("agent `{}` fault: {e}", self.name);
                let reason = match e {
                    AgentError::Timeout(_) => "timeout",
                    AgentError::Malformed(_) => "malformed",
                    _ => "disconnected",
                };
                self.faults.push(reason.to_string());
                self.total_faults += 1;
                queue_order(snapshot)
                    .into_iter()
                    .map(|j| Decision::delay(&j.spec.id))
                    .collect()
            }
        }
    }

    fn drain_faults(&mut self) -> Vec<String> {
        std::mem::take(&mut self.faults)
    }
}

impl Drop for AgentScheduler {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
