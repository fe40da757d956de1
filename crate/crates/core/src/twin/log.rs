//! The twin's append-only event log.
//!
//! Every state transition appends one [`LogEntry`]. The log is the single
//! source for KPI computation and for crash recovery: replaying it over the
//! initial topology reproduces the twin exactly.
//!
//! Wire form is one flat JSON object per line:
//! `{"t":…,"actor":…,"action":…,"job":…,"node":…,"outcome":…}`, plus an
//! `event` field carrying the payload for scenario/ingest events.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Millis, ScenarioEvent};

/// Actor name used for entries the twin derives itself (e.g. requeues
/// caused by a node failure).
pub const ACTOR_TWIN: &str = "twin";
pub const ACTOR_ENGINE: &str = "engine";
pub const ACTOR_SCENARIO: &str = "scenario";
pub const ACTOR_INGEST: &str = "ingest";
pub const ACTOR_MANAGER: &str = "manager";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    JobArrival,
    NodeFail,
    NodeRecover,
    LinkChange,
    MetricUpdate,
    Heartbeat,
    Place,
    Delay,
    Migrate,
    TransferDone,
    Complete,
    Fail,
    Requeue,
    /// Scheduler protocol fault (timeout, malformed reply).
    Fault,
    End,
    Shutdown,
}

impl Action {
    pub fn is_event(self) -> bool {
        matches!(
            self,
            Action::JobArrival
                | Action::NodeFail
                | Action::NodeRecover
                | Action::LinkChange
                | Action::MetricUpdate
        )
    }

    pub fn is_decision(self) -> bool {
        matches!(self, Action::Place | Action::Delay | Action::Migrate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Outcome {
    Applied,
    Rejected(String),
}

impl Outcome {
    pub fn is_applied(&self) -> bool {
        matches!(self, Outcome::Applied)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Applied => f.write_str("applied"),
            Outcome::Rejected(reason) => write!(f, "rejected:{reason}"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "applied" {
            Ok(Outcome::Applied)
        } else if let Some(reason) = s.strip_prefix("rejected:") {
            Ok(Outcome::Rejected(reason.to_string()))
        } else {
            Err(format!("invalid outcome `{s}`"))
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub t: Millis,
    pub actor: String,
    pub action: Action,
    pub job: Option<String>,
    pub node: Option<String>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<ScenarioEvent>,
}

impl LogEntry {
    pub fn new(t: Millis, actor: &str, action: Action) -> Self {
        Self {
            t,
            actor: actor.to_string(),
            action,
            job: None,
            node: None,
            outcome: Outcome::Applied,
            event: None,
        }
    }

    pub fn job(mut self, job: impl Into<String>) -> Self {
        self.job = Some(job.into());
        self
    }

    pub fn node(mut self, node: impl Into<String>) -> Self {
        self.node = Some(node.into());
        self
    }

    pub fn rejected(mut self, reason: impl Into<String>) -> Self {
        self.outcome = Outcome::Rejected(reason.into());
        self
    }

    pub fn with_event(mut self, event: ScenarioEvent) -> Self {
        self.event = Some(event);
        self
    }
}

/// Writes entries as newline-delimited JSON.
pub fn write_ndjson<W: std::io::Write>(mut out: W, entries: &[LogEntry]) -> std::io::Result<()> {
    for entry in entries {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_ndjson(entries: &[LogEntry]) -> String {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, entries).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_round_trip() {
        for o in [Outcome::Applied, Outcome::Rejected("capacity-exceeded".into())] {
            let s = serde_json::to_string(&o).unwrap();
            assert_eq!(serde_json::from_str::<Outcome>(&s).unwrap(), o);
        }
        assert!("nope".parse::<Outcome>().is_err());
    }

    #[test]
    fn record_has_fixed_columns() {
        let e = LogEntry::new(10, "first-fit", Action::Place)
            .job("j1")
            .node("n1");
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"t":10,"actor":"first-fit","action":"place","job":"j1","node":"n1","outcome":"applied"}"#
        );
        let d = LogEntry::new(0, "engine", Action::End);
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"t":0,"actor":"engine","action":"end","job":null,"node":null,"outcome":"applied"}"#
        );
    }
}
