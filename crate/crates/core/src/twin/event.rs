//! Time-tagged updates driven into the twin.
//!
//! On the wire an event is a flat JSON object: `t` and `kind` plus the
//! payload fields of that kind, e.g.
//! `{"t":5000,"kind":"node_fail","node":"edge-1"}`.

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use super::{JobSpec, LinkSpec, Millis};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub t: Millis,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    JobArrival(JobSpec),
    NodeFail { node: String },
    NodeRecover { node: String },
    /// Replaces latency, bandwidth and up flag of the link between `a` and `b`.
    LinkChange(LinkSpec),
    MetricUpdate { node: String, background_load: f64 },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::JobArrival(_) => "job_arrival",
            EventKind::NodeFail { .. } => "node_fail",
            EventKind::NodeRecover { .. } => "node_recover",
            EventKind::LinkChange(_) => "link_change",
            EventKind::MetricUpdate { .. } => "metric_update",
        }
    }

    pub const NAMES: [&'static str; 5] = [
        "job_arrival",
        "node_fail",
        "node_recover",
        "link_change",
        "metric_update",
    ];
}

impl ScenarioEvent {
    pub fn new(t: Millis, kind: EventKind) -> Self {
        Self { t, kind }
    }

    pub fn job_arrival(t: Millis, job: JobSpec) -> Self {
        Self::new(t, EventKind::JobArrival(job))
    }

    pub fn node_fail(t: Millis, node: impl Into<String>) -> Self {
        Self::new(t, EventKind::NodeFail { node: node.into() })
    }

    pub fn node_recover(t: Millis, node: impl Into<String>) -> Self {
        Self::new(t, EventKind::NodeRecover { node: node.into() })
    }

    pub fn link_change(t: Millis, link: LinkSpec) -> Self {
        Self::new(t, EventKind::LinkChange(link))
    }

    pub fn metric_update(t: Millis, node: impl Into<String>, background_load: f64) -> Self {
        Self::new(
            t,
            EventKind::MetricUpdate {
                node: node.into(),
                background_load,
            },
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodePayload {
    node: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricPayload {
    node: String,
    background_load: f64,
}

impl Serialize for ScenarioEvent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error as _;
        let payload = match &self.kind {
            EventKind::JobArrival(job) => serde_json::to_value(job),
            EventKind::NodeFail { node } | EventKind::NodeRecover { node } => {
                serde_json::to_value(NodePayload { node: node.clone() })
            }
            EventKind::LinkChange(link) => serde_json::to_value(link),
            EventKind::MetricUpdate {
                node,
                background_load,
            } => serde_json::to_value(MetricPayload {
                node: node.clone(),
                background_load: *background_load,
            }),
        }
        .map_err(S::Error::custom)?;
        let Value::Object(fields) = payload else {
            return Err(S::Error::custom("event payload is not an object"));
        };
        let mut map = serializer.serialize_map(Some(fields.len() + 2))?;
        map.serialize_entry("t", &self.t)?;
        map.serialize_entry("kind", self.kind.name())?;
        for (k, v) in &fields {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ScenarioEvent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mut map = Map::deserialize(deserializer)?;
        let t = map.remove("t").ok_or_else(|| D::Error::missing_field("t"))?;
        let t: Millis = serde_json::from_value(t).map_err(D::Error::custom)?;
        let kind = map
            .remove("kind")
            .ok_or_else(|| D::Error::missing_field("kind"))?;
        let Value::String(kind) = kind else {
            return Err(D::Error::custom("`kind` must be a string"));
        };
        let rest = Value::Object(map);
        let kind = match kind.as_str() {
            "job_arrival" => {
                EventKind::JobArrival(serde_json::from_value(rest).map_err(D::Error::custom)?)
            }
            "node_fail" => {
                let p: NodePayload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                EventKind::NodeFail { node: p.node }
            }
            "node_recover" => {
                let p: NodePayload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                EventKind::NodeRecover { node: p.node }
            }
            "link_change" => {
                EventKind::LinkChange(serde_json::from_value(rest).map_err(D::Error::custom)?)
            }
            "metric_update" => {
                let p: MetricPayload = serde_json::from_value(rest).map_err(D::Error::custom)?;
                EventKind::MetricUpdate {
                    node: p.node,
                    background_load: p.background_load,
                }
            }
            other => return Err(D::Error::unknown_variant(other, &EventKind::NAMES)),
        };
        Ok(ScenarioEvent { t, kind })
    }
}
