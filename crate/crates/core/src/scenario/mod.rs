//! Scenario documents: topology plus a timeline of events.
//!
//! Parsing is strict. Unknown fields anywhere in the document are an
//! error, and a parsed document must also pass [`validate_scenario`].

mod fixtures;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::fixtures::{fixture_text, load_fixture, FixtureError, FIXTURE_NAMES};
pub use self::synth::{generate_synthetic, Range, SynthesisError, SynthesisParams};
pub use crate::twin::{EventKind, ScenarioEvent};
use crate::twin::{Topology, TwinState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub description: String,
    pub topology: Topology,
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    /// A fresh twin over this scenario's topology.
    pub fn twin(&self) -> Result<TwinState, crate::twin::TwinError> {
        TwinState::new(self.topology.clone())
    }

    /// Canonical document text: one node, link or event per line.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!("  \"name\": {},\n", compact(&self.name)));
        out.push_str(&format!("  \"seed\": {},\n", self.seed));
        out.push_str(&format!("  \"description\": {},\n", compact(&self.description)));
        out.push_str("  \"topology\": {\n");
        out.push_str("    \"nodes\": [");
        push_items(&mut out, self.topology.nodes.iter().map(compact), "      ");
        out.push_str("],\n");
        out.push_str("    \"links\": [");
        push_items(&mut out, self.topology.links.iter().map(compact), "      ");
        out.push_str("]\n  },\n");
        out.push_str("  \"events\": [");
        push_items(&mut out, self.events.iter().map(compact), "    ");
        out.push_str("]\n}\n");
        out
    }
}

fn push_items(out: &mut String, items: impl Iterator<Item = String>, indent: &str) {
    let items: Vec<String> = items.collect();
    if items.is_empty() {
        return;
    }
    out.push('\n');
    for (i, item) in items.iter().enumerate() {
        out.push_str(indent);
        out.push_str(item);
        if i + 1 < items.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str(&indent[..indent.len() - 2]);
}

fn compact<T: Serialize>(value: T) -> String {
    serde_json::to_string(&value).expect("scenario values serialize")
}

/// Machine-readable validation and parse codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueCode {
    Syntax,
    UnknownField,
    Schema,
    OrderingViolation,
    DanglingId,
    DuplicateJobId,
    DuplicateNodeId,
    DuplicateLink,
    SelfLink,
    InvalidValue,
    LatencyBoundWithoutSource,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::Syntax => "syntax",
            IssueCode::UnknownField => "unknown-field",
            IssueCode::Schema => "schema",
            IssueCode::OrderingViolation => "ordering-violation",
            IssueCode::DanglingId => "dangling-id",
            IssueCode::DuplicateJobId => "duplicate-job-id",
            IssueCode::DuplicateNodeId => "duplicate-node-id",
            IssueCode::DuplicateLink => "duplicate-link",
            IssueCode::SelfLink => "self-link",
            IssueCode::InvalidValue => "invalid-value",
            IssueCode::LatencyBoundWithoutSource => "latency-bound-without-source",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    /// JSON-path-like location, e.g. `events[3].data_source`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{code} at line {line}, column {column}: {message}")]
    Parse {
        code: IssueCode,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Issue>),
}

impl ScenarioError {
    pub fn code(&self) -> IssueCode {
        match self {
            ScenarioError::Parse { code, .. } => *code,
            ScenarioError::Invalid(issues) => issues.first().map_or(IssueCode::Schema, |i| i.code),
        }
    }

    pub fn issues(&self) -> Vec<Issue> {
        match self {
            ScenarioError::Parse {
                code,
                line,
                column,
                message,
            } => vec![Issue {
                code: *code,
                path: format!("line {line}, column {column}"),
                message: message.clone(),
            }],
            ScenarioError::Invalid(issues) => issues.clone(),
        }
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        use serde_json::error::Category;
        let message = e.to_string();
        let code = match e.classify() {
            Category::Data if message.contains("unknown field") => IssueCode::UnknownField,
            Category::Data => IssueCode::Schema,
            Category::Io | Category::Syntax | Category::Eof => IssueCode::Syntax,
        };
        ScenarioError::Parse {
            code,
            line: e.line(),
            column: e.column(),
            message,
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text)?;
    let issues = validate_scenario(&scenario);
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(issues))
    }
}

/// Every violated scenario invariant; empty when the scenario is valid.
pub fn validate_scenario(s: &Scenario) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut issue = |code, path: String, message: String| issues.push(Issue { code, path, message });

    let mut node_ids = BTreeSet::new();
    let mut zones = BTreeSet::new();
    for (i, n) in s.topology.nodes.iter().enumerate() {
        if !node_ids.insert(n.id.as_str()) {
            issue(IssueCode::DuplicateNodeId, format!("topology.nodes[{i}].id"), format!("node id `{}` repeats", n.id));
        }
        if let Some(z) = n.zone() {
            zones.insert(z);
        }
        if !(n.power_idle_w.is_finite() && n.power_max_w.is_finite())
            || n.power_idle_w < 0.0
            || n.power_max_w < n.power_idle_w
        {
            issue(
                IssueCode::InvalidValue,
                format!("topology.nodes[{i}]"),
                "power_max_w >= power_idle_w >= 0 required".into(),
            );
        }
    }

    let mut pairs = BTreeSet::new();
    for (i, l) in s.topology.links.iter().enumerate() {
        for (end, field) in [(&l.a, "a"), (&l.b, "b")] {
            if !node_ids.contains(end.as_str()) {
                issue(IssueCode::DanglingId, format!("topology.links[{i}].{field}"), format!("unknown node `{end}`"));
            }
        }
        if l.a == l.b {
            issue(IssueCode::SelfLink, format!("topology.links[{i}]"), format!("link from `{}` to itself", l.a));
        }
        let key = if l.a <= l.b { (l.a.as_str(), l.b.as_str()) } else { (l.b.as_str(), l.a.as_str()) };
        if !pairs.insert(key) {
            issue(IssueCode::DuplicateLink, format!("topology.links[{i}]"), format!("second link between `{}` and `{}`", l.a, l.b));
        }
        if !(l.bandwidth_mbps.is_finite() && l.bandwidth_mbps > 0.0) {
            issue(IssueCode::InvalidValue, format!("topology.links[{i}].bandwidth_mbps"), "bandwidth must be > 0".into());
        }
    }

    let mut job_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut last_t = 0;
    for (i, ev) in s.events.iter().enumerate() {
        let at = |field: &str| format!("events[{i}].{field}");
        if ev.t < last_t {
            issue(
                IssueCode::OrderingViolation,
                at("t"),
                format!("time {} ms precedes previous event at {last_t} ms", ev.t),
            );
        }
        last_t = last_t.max(ev.t);
        match &ev.kind {
            EventKind::JobArrival(job) => {
                if let Some(first) = job_ids.insert(job.id.as_str(), i) {
                    issue(IssueCode::DuplicateJobId, at("id"), format!("job `{}` already arrived in events[{first}]", job.id));
                }
                if job.duration_ms == 0 {
                    issue(IssueCode::InvalidValue, at("duration_ms"), "duration must be > 0".into());
                }
                if !(job.data_mb.is_finite() && job.data_mb >= 0.0) {
                    issue(IssueCode::InvalidValue, at("data_mb"), "data size must be >= 0".into());
                }
                match &job.data_source {
                    Some(src) if !node_ids.contains(src.as_str()) && !zones.contains(src.as_str()) => {
                        issue(IssueCode::DanglingId, at("data_source"), format!("`{src}` is neither a node nor a zone"));
                    }
                    None if job.latency_bound_ms.is_some() => {
                        issue(
                            IssueCode::LatencyBoundWithoutSource,
                            at("latency_bound_ms"),
                            "latency bound requires a data_source".into(),
                        );
                    }
                    _ => {}
                }
            }
            EventKind::NodeFail { node } | EventKind::NodeRecover { node } => {
                if !node_ids.contains(node.as_str()) {
                    issue(IssueCode::DanglingId, at("node"), format!("unknown node `{node}`"));
                }
            }
            EventKind::LinkChange(l) => {
                if !s.topology.links.iter().any(|t| t.connects(&l.a, &l.b)) {
                    issue(IssueCode::DanglingId, at("a"), format!("no link between `{}` and `{}`", l.a, l.b));
                }
                if !(l.bandwidth_mbps.is_finite() && l.bandwidth_mbps > 0.0) {
                    issue(IssueCode::InvalidValue, at("bandwidth_mbps"), "bandwidth must be > 0".into());
                }
            }
            EventKind::MetricUpdate { node, background_load } => {
                if !node_ids.contains(node.as_str()) {
                    issue(IssueCode::DanglingId, at("node"), format!("unknown node `{node}`"));
                }
                if !(0.0..=1.0).contains(background_load) {
                    issue(IssueCode::InvalidValue, at("background_load"), "background load must be in [0, 1]".into());
                }
            }
        }
    }
    issues
}
