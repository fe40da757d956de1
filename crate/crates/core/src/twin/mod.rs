//! Digital-twin state model of the compute continuum.
//!
//! A [`TwinState`] holds the topology (nodes with their up flag and
//! background load, links), every job that ever arrived, and the
//! append-only [`LogEntry`] stream of everything that changed it. All
//! mutation goes through its methods, which keep the per-node capacity
//! invariant: on every up node the demands of transferring and running
//! jobs never exceed capacity.

mod event;
mod log;
mod replay;
mod routing;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::event::{EventKind, ScenarioEvent};
pub use self::log::{
    to_ndjson, write_ndjson, Action, LogEntry, Outcome, ACTOR_ENGINE, ACTOR_INGEST,
    ACTOR_MANAGER, ACTOR_SCENARIO, ACTOR_TWIN,
};
pub use self::replay::Replayer;
pub use self::routing::Route;
pub(crate) use self::routing::Router;

/// Virtual time in integer milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Iot,
    Edge,
    Cloud,
    Hpc,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Iot, Tier::Edge, Tier::Cloud, Tier::Hpc];
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Iot => "iot",
            Tier::Edge => "edge",
            Tier::Cloud => "cloud",
            Tier::Hpc => "hpc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub tier: Tier,
    pub cpu_m: u64,
    pub mem_mib: u64,
    pub storage_gib: u64,
    pub power_idle_w: f64,
    pub power_max_w: f64,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl NodeSpec {
    pub fn zone(&self) -> Option<&str> {
        self.labels.get("zone").map(String::as_str)
    }

    pub fn capacity(&self) -> Resources {
        Resources {
            cpu_m: self.cpu_m,
            mem_mib: self.mem_mib,
            storage_gib: self.storage_gib,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency_ms: Millis,
    pub bandwidth_mbps: f64,
    pub up: bool,
}

impl LinkSpec {
    pub fn new(a: impl Into<String>, b: impl Into<String>, latency_ms: Millis, bandwidth_mbps: f64) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            latency_ms,
            bandwidth_mbps,
            up: true,
        }
    }

    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.a == a && self.b == b) || (self.a == b && self.b == a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

/// The three schedulable resources of a node or job.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resources {
    pub cpu_m: u64,
    pub mem_mib: u64,
    pub storage_gib: u64,
}

impl Resources {
    pub fn new(cpu_m: u64, mem_mib: u64, storage_gib: u64) -> Self {
        Self {
            cpu_m,
            mem_mib,
            storage_gib,
        }
    }

    pub fn fits_within(&self, free: &Resources) -> bool {
        self.first_excess(free).is_none()
    }

    /// Name of the first resource where `self` exceeds `free`.
    pub fn first_excess(&self, free: &Resources) -> Option<&'static str> {
        if self.cpu_m > free.cpu_m {
            Some("cpu")
        } else if self.mem_mib > free.mem_mib {
            Some("mem")
        } else if self.storage_gib > free.storage_gib {
            Some("storage")
        } else {
            None
        }
    }

    pub fn plus(&self, o: &Resources) -> Resources {
        Resources {
            cpu_m: self.cpu_m + o.cpu_m,
            mem_mib: self.mem_mib + o.mem_mib,
            storage_gib: self.storage_gib + o.storage_gib,
        }
    }

    pub fn minus(&self, o: &Resources) -> Resources {
        Resources {
            cpu_m: self.cpu_m.saturating_sub(o.cpu_m),
            mem_mib: self.mem_mib.saturating_sub(o.mem_mib),
            storage_gib: self.storage_gib.saturating_sub(o.storage_gib),
        }
    }

    pub fn as_array(&self) -> [u64; 3] {
        [self.cpu_m, self.mem_mib, self.storage_gib]
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero_u32(v: &u32) -> bool {
    *v == 0
}

fn is_zero_f64(v: &f64) -> bool {
    *v == 0.0
}

/// A containerized workload: demands plus placement constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    pub id: String,
    pub cpu_m: u64,
    pub mem_mib: u64,
    pub storage_gib: u64,
    pub duration_ms: Millis,
    #[serde(default, skip_serializing_if = "is_zero_f64")]
    pub data_mb: f64,
    /// Node id, or a zone label resolved to the nearest up node of that zone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_source: Option<String>,
    /// Max path latency between the placement node and the data source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_bound_ms: Option<Millis>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub allowed_tiers: BTreeSet<Tier>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub allowed_zones: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "is_zero_u32")]
    pub priority: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub migratable: bool,
}

impl JobSpec {
    /// A job with the given demands and no constraints.
    pub fn new(id: impl Into<String>, cpu_m: u64, mem_mib: u64, storage_gib: u64, duration_ms: Millis) -> Self {
        Self {
            id: id.into(),
            cpu_m,
            mem_mib,
            storage_gib,
            duration_ms,
            data_mb: 0.0,
            data_source: None,
            latency_bound_ms: None,
            allowed_tiers: BTreeSet::new(),
            allowed_zones: BTreeSet::new(),
            priority: 0,
            migratable: false,
        }
    }

    pub fn demand(&self) -> Resources {
        Resources::new(self.cpu_m, self.mem_mib, self.storage_gib)
    }

    /// Checks the field-level invariants of a job.
    pub fn check(&self) -> Result<(), String> {
        if self.duration_ms == 0 {
            return Err("duration_ms must be > 0".into());
        }
        if !(self.data_mb.is_finite() && self.data_mb >= 0.0) {
            return Err("data_mb must be a finite value >= 0".into());
        }
        if self.latency_bound_ms.is_some() && self.data_source.is_none() {
            return Err("latency_bound_ms requires data_source".into());
        }
        Ok(())
    }

    pub fn allows(&self, node: &NodeSpec) -> bool {
        let tier_ok = self.allowed_tiers.is_empty() || self.allowed_tiers.contains(&node.tier);
        let zone_ok = self.allowed_zones.is_empty()
            || node.zone().is_some_and(|z| self.allowed_zones.contains(z));
        tier_ok && zone_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Queued,
    Transferring,
    Running,
    Completed,
    Failed,
}

impl Phase {
    pub fn is_active(self) -> bool {
        matches!(self, Phase::Transferring | Phase::Running)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobState {
    pub spec: JobSpec,
    pub arrival: Millis,
    pub phase: Phase,
    /// Current node while active; last node once terminal.
    pub node: Option<String>,
    pub placed_at: Option<Millis>,
    pub transfer_ends: Option<Millis>,
    pub compute_ends: Option<Millis>,
    /// Work left at the start of the current compute segment.
    pub remaining_work: Millis,
    pub restarts: u32,
    pub violation: bool,
    pub finished_at: Option<Millis>,
}

impl JobState {
    fn queued(spec: JobSpec, arrival: Millis) -> Self {
        Self {
            remaining_work: spec.duration_ms,
            spec,
            arrival,
            phase: Phase::Queued,
            node: None,
            placed_at: None,
            transfer_ends: None,
            compute_ends: None,
            restarts: 0,
            violation: false,
            finished_at: None,
        }
    }

    /// Work still outstanding at virtual time `t`.
    pub fn remaining_at(&self, t: Millis) -> Millis {
        match (self.phase, self.compute_ends) {
            (Phase::Running, Some(end)) => end.saturating_sub(t).min(self.remaining_work),
            _ => self.remaining_work,
        }
    }

    /// Time of this job's next internal transition, if any.
    pub fn next_transition(&self) -> Option<Millis> {
        match self.phase {
            Phase::Transferring => self.transfer_ends,
            Phase::Running => self.compute_ends,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeState {
    pub spec: NodeSpec,
    pub up: bool,
    pub background_load: f64,
    pub allocated: Resources,
}

/// Linear idle-to-max power model; `utilization` is clamped to [0, 1].
pub fn node_power(node: &NodeSpec, utilization: f64) -> f64 {
    let u = utilization.clamp(0.0, 1.0);
    node.power_idle_w + (node.power_max_w - node.power_idle_w) * u
}

fn fraction(used: u64, cap: u64) -> f64 {
    if cap == 0 {
        0.0
    } else {
        used as f64 / cap as f64
    }
}

impl NodeState {
    fn new(spec: NodeSpec) -> Self {
        Self {
            spec,
            up: true,
            background_load: 0.0,
            allocated: Resources::default(),
        }
    }

    pub fn capacity(&self) -> Resources {
        self.spec.capacity()
    }

    pub fn free(&self) -> Resources {
        self.capacity().minus(&self.allocated)
    }

    /// Utilization if `allocated` were the node's allocation: the largest
    /// resource fraction plus background load, clamped to [0, 1].
    pub fn utilization_with(&self, allocated: &Resources) -> f64 {
        let cap = self.capacity().as_array();
        let used = allocated.as_array();
        let peak = (0..3)
            .map(|i| fraction(used[i], cap[i]))
            .fold(0.0_f64, f64::max);
        (peak + self.background_load).clamp(0.0, 1.0)
    }

    pub fn utilization(&self) -> f64 {
        self.utilization_with(&self.allocated)
    }

    /// Current draw; down nodes draw nothing.
    pub fn power(&self) -> f64 {
        if self.up {
            node_power(&self.spec, self.utilization())
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TwinError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("no link between `{0}` and `{1}`")]
    UnknownLink(String, String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("duplicate job `{0}`")]
    DuplicateJob(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("time regression: clock is {clock} ms, got {t} ms")]
    TimeRegression { clock: Millis, t: Millis },
    #[error("job `{job}` exceeds free {resource} on `{node}`")]
    CapacityExceeded {
        job: String,
        node: String,
        resource: &'static str,
    },
    #[error("node `{0}` is down")]
    NodeDown(String),
    #[error("data source `{source_id}` unreachable from `{node}`")]
    Unreachable { node: String, source_id: String },
    #[error("job `{0}` is not queued")]
    NotQueued(String),
    #[error("job `{0}` is not active")]
    NotActive(String),
    #[error("job `{job}` may not run on `{node}` (tier/zone constraint)")]
    Disallowed { job: String, node: String },
    #[error("job `{0}` is not migratable")]
    NotMigratable(String),
    #[error("job `{0}` already runs on the target node")]
    SameNode(String),
    #[error("placement of `{job}` on `{node}` violates its latency bound")]
    LatencyBound { job: String, node: String },
    #[error("malformed log: {0}")]
    MalformedLog(String),
}

impl TwinError {
    /// Stable machine-readable code, used as the rejection reason in logs.
    pub fn code(&self) -> &'static str {
        match self {
            TwinError::InvalidTopology(_) => "invalid-topology",
            TwinError::UnknownNode(_) | TwinError::UnknownLink(..) | TwinError::UnknownJob(_) => {
                "dangling-id"
            }
            TwinError::DuplicateJob(_) => "duplicate-job-id",
            TwinError::InvalidEvent(_) => "invalid-event",
            TwinError::TimeRegression { .. } => "ordering",
            TwinError::CapacityExceeded { .. } => "capacity-exceeded",
            TwinError::NodeDown(_) => "node-down",
            TwinError::Unreachable { .. } => "unreachable",
            TwinError::NotQueued(_) => "not-queued",
            TwinError::NotActive(_) => "not-active",
            TwinError::Disallowed { .. } => "disallowed",
            TwinError::NotMigratable(_) => "not-migratable",
            TwinError::SameNode(_) => "same-node",
            TwinError::LatencyBound { .. } => "latency-bound",
            TwinError::MalformedLog(_) => "malformed-log",
        }
    }
}

/// What a placement of a job on a node would look like.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPlan {
    pub source_route: Option<Route>,
    pub transfer_ms: Millis,
    pub violation: bool,
}

/// Full virtual-time snapshot of the continuum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwinState {
    clock: Millis,
    topology: Topology,
    nodes: BTreeMap<String, NodeState>,
    links: Vec<LinkSpec>,
    jobs: BTreeMap<String, JobState>,
    event_log: Vec<LogEntry>,
    /// Ids of jobs that are queued or active.
    #[serde(skip)]
    open: BTreeSet<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TwinStateRepr {
    clock: Millis,
    topology: Topology,
    nodes: BTreeMap<String, NodeState>,
    links: Vec<LinkSpec>,
    jobs: BTreeMap<String, JobState>,
    event_log: Vec<LogEntry>,
}

impl<'de> Deserialize<'de> for TwinState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = TwinStateRepr::deserialize(d)?;
        let open = r
            .jobs
            .iter()
            .filter(|(_, j)| !j.phase.is_terminal())
            .map(|(id, _)| id.clone())
            .collect();
        Ok(TwinState {
            clock: r.clock,
            topology: r.topology,
            nodes: r.nodes,
            links: r.links,
            jobs: r.jobs,
            event_log: r.event_log,
            open,
        })
    }
}

/// Checks ids, endpoints and numeric ranges of a topology.
pub fn check_topology(topology: &Topology) -> Result<(), TwinError> {
    let bad = |m: String| Err(TwinError::InvalidTopology(m));
    let mut ids = BTreeSet::new();
    for n in &topology.nodes {
        if !ids.insert(n.id.as_str()) {
            return bad(format!("duplicate node id `{}`", n.id));
        }
        if !(n.power_idle_w.is_finite() && n.power_max_w.is_finite())
            || n.power_idle_w < 0.0
            || n.power_max_w < n.power_idle_w
        {
            return bad(format!("node `{}` needs power_max_w >= power_idle_w >= 0", n.id));
        }
    }
    let mut pairs = BTreeSet::new();
    for l in &topology.links {
        for end in [&l.a, &l.b] {
            if !ids.contains(end.as_str()) {
                return bad(format!("link endpoint `{end}` is not a node"));
            }
        }
        if l.a == l.b {
            return bad(format!("self-link on `{}`", l.a));
        }
        let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
        if !pairs.insert(key) {
            return bad(format!("duplicate link `{}`–`{}`", l.a, l.b));
        }
        if !(l.bandwidth_mbps.is_finite() && l.bandwidth_mbps > 0.0) {
            return bad(format!("link `{}`–`{}` needs bandwidth > 0", l.a, l.b));
        }
    }
    Ok(())
}

impl TwinState {
    pub fn new(topology: Topology) -> Result<Self, TwinError> {
        check_topology(&topology)?;
        let nodes = topology
            .nodes
            .iter()
            .map(|n| (n.id.clone(), NodeState::new(n.clone())))
            .collect();
        Ok(Self {
            clock: 0,
            links: topology.links.clone(),
            topology,
            nodes,
            jobs: BTreeMap::new(),
            event_log: Vec::new(),
            open: BTreeSet::new(),
        })
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    /// The topology the twin was created from (before any link changes).
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn nodes(&self) -> &BTreeMap<String, NodeState> {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&NodeState> {
        self.nodes.get(id)
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn jobs(&self) -> &BTreeMap<String, JobState> {
        &self.jobs
    }

    pub fn job(&self, id: &str) -> Option<&JobState> {
        self.jobs.get(id)
    }

    pub fn event_log(&self) -> &[LogEntry] {
        &self.event_log
    }

    /// Jobs that are queued or active, in id order.
    pub fn open_jobs(&self) -> impl Iterator<Item = &JobState> + '_ {
        self.open.iter().map(move |id| &self.jobs[id])
    }

    pub fn queued_jobs(&self) -> impl Iterator<Item = &JobState> + '_ {
        self.open_jobs().filter(|j| j.phase == Phase::Queued)
    }

    pub fn active_jobs(&self) -> impl Iterator<Item = &JobState> + '_ {
        self.open_jobs().filter(|j| j.phase.is_active())
    }

    pub fn has_active_jobs(&self) -> bool {
        self.active_jobs().next().is_some()
    }

    /// Self-contained value copy; later mutations of `self` do not affect it.
    pub fn snapshot(&self) -> TwinState {
        self.clone()
    }

    /// Moves the clock forward without logging anything.
    pub fn advance_clock(&mut self, t: Millis) -> Result<(), TwinError> {
        if t < self.clock {
            return Err(TwinError::TimeRegression { clock: self.clock, t });
        }
        self.clock = t;
        Ok(())
    }

    /// Appends an entry that does not change state (delays, faults,
    /// rejections, end markers).
    pub fn record(&mut self, entry: LogEntry) {
        self.event_log.push(entry);
    }

    fn node_or_err(&self, id: &str) -> Result<&NodeState, TwinError> {
        self.nodes
            .get(id)
            .ok_or_else(|| TwinError::UnknownNode(id.to_string()))
    }

    fn job_or_err(&self, id: &str) -> Result<&JobState, TwinError> {
        self.jobs
            .get(id)
            .ok_or_else(|| TwinError::UnknownJob(id.to_string()))
    }

    /// Memoising router over the current state, for callers that route
    /// many pairs without changing the twin in between.
    pub(crate) fn router(&self) -> Router<'_> {
        Router::new(&self.nodes, &self.links)
    }

    /// True when `source` names a node or a zone label of some node.
    pub fn resolves_source(&self, source: &str) -> bool {
        self.nodes.contains_key(source) || self.nodes.values().any(|n| n.spec.zone() == Some(source))
    }

    // ---- network ----

    pub fn route(&self, a: &str, b: &str) -> Result<Option<Route>, TwinError> {
        self.node_or_err(a)?;
        self.node_or_err(b)?;
        Ok(self.router().route(a, b))
    }

    /// Minimum total latency over up links; `None` when disconnected.
    pub fn path_latency(&self, a: &str, b: &str) -> Result<Option<Millis>, TwinError> {
        Ok(self.route(a, b)?.map(|r| r.latency_ms))
    }

    /// Latency plus serialization time at the bottleneck of the
    /// min-latency path; `None` when disconnected.
    pub fn transfer_time(&self, a: &str, b: &str, size_mb: f64) -> Result<Option<Millis>, TwinError> {
        Ok(self.route(a, b)?.map(|r| r.transfer_ms(size_mb)))
    }

    /// Min-latency distance from `src` to every node reachable from it.
    pub fn latencies_from(&self, src: &str) -> BTreeMap<String, Millis> {
        self.router().latencies_from(src)
    }

    /// Route from `node` to the job's data source. A zone source resolves
    /// to the nearest up node of that zone (ties by node id).
    pub fn source_route(&self, job: &JobSpec, node: &str) -> Result<Option<Route>, TwinError> {
        self.source_route_with(&self.router(), job, node)
    }

    pub(crate) fn source_route_with(&self, router: &Router<'_>, job: &JobSpec, node: &str) -> Result<Option<Route>, TwinError> {
        let Some(source) = job.data_source.as_deref() else {
            return Ok(None);
        };
        let unreachable = || TwinError::Unreachable {
            node: node.to_string(),
            source_id: source.to_string(),
        };
        if self.nodes.contains_key(source) {
            return router.route(node, source).map(Some).ok_or_else(unreachable);
        }
        self.nodes
            .values()
            .filter(|n| n.spec.zone() == Some(source))
            .filter_map(|n| router.route(node, &n.spec.id).map(|r| (r.latency_ms, n.spec.id.clone(), r)))
            .min_by(|x, y| (x.0, &x.1).cmp(&(y.0, &y.1)))
            .map(|(_, _, r)| Some(r))
            .ok_or_else(unreachable)
    }

    pub fn power_draw(&self) -> f64 {
        self.nodes.values().map(NodeState::power).sum()
    }

    // ---- placement ----

    /// Checks every precondition of placing `job` on `node` (ignoring the
    /// job's phase) and computes the transfer and latency outcome.
    pub fn plan_placement(&self, job: &JobSpec, node_id: &str) -> Result<PlacementPlan, TwinError> {
        let node = self.node_or_err(node_id)?;
        if !node.up {
            return Err(TwinError::NodeDown(node_id.to_string()));
        }
        if !job.allows(&node.spec) {
            return Err(TwinError::Disallowed {
                job: job.id.clone(),
                node: node_id.to_string(),
            });
        }
        if let Some(resource) = job.demand().first_excess(&node.free()) {
            return Err(TwinError::CapacityExceeded {
                job: job.id.clone(),
                node: node_id.to_string(),
                resource,
            });
        }
        let source_route = self.source_route(job, node_id)?;
        let violation = match (job.latency_bound_ms, &source_route) {
            (Some(bound), Some(route)) => route.latency_ms > bound,
            _ => false,
        };
        let transfer_ms = match &source_route {
            Some(route) if job.data_mb > 0.0 => route.transfer_ms(job.data_mb),
            _ => 0,
        };
        Ok(PlacementPlan {
            source_route,
            transfer_ms,
            violation,
        })
    }

    /// Places a queued job. The job starts transferring its input when
    /// it has data to move, otherwise it starts running immediately.
    pub fn place_job(&mut self, job_id: &str, node_id: &str, actor: &str) -> Result<PlacementPlan, TwinError> {
        let job = self.job_or_err(job_id)?;
        if job.phase != Phase::Queued {
            return Err(TwinError::NotQueued(job_id.to_string()));
        }
        let plan = self.plan_placement(&job.spec, node_id)?;
        let demand = job.spec.demand();
        let now = self.clock;

        let node = self.nodes.get_mut(node_id).expect("checked by plan");
        node.allocated = node.allocated.plus(&demand);

        let job = self.jobs.get_mut(job_id).expect("checked above");
        job.node = Some(node_id.to_string());
        job.placed_at = Some(now);
        job.violation = plan.violation;
        job.start_segment(now, plan.transfer_ms);

        self.event_log
            .push(LogEntry::new(now, actor, Action::Place).job(job_id).node(node_id));
        Ok(plan)
    }

    /// Marks the end of a job's input transfer; compute starts now.
    pub fn finish_transfer(&mut self, job_id: &str, actor: &str) -> Result<(), TwinError> {
        let now = self.clock;
        let job = self
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| TwinError::UnknownJob(job_id.to_string()))?;
        if job.phase != Phase::Transferring {
            return Err(TwinError::NotActive(job_id.to_string()));
        }
        job.phase = Phase::Running;
        job.transfer_ends = None;
        job.compute_ends = Some(now + job.remaining_work);
        let node = job.node.clone();
        let mut entry = LogEntry::new(now, actor, Action::TransferDone).job(job_id);
        entry.node = node;
        self.event_log.push(entry);
        Ok(())
    }

    /// Frees an active job's allocation and moves it to a terminal phase.
    pub fn release_job(&mut self, job_id: &str, outcome: Terminal, actor: &str) -> Result<(), TwinError> {
        let now = self.clock;
        let job = self.job_or_err(job_id)?;
        if !job.phase.is_active() {
            return Err(TwinError::NotActive(job_id.to_string()));
        }
        let node_id = job.node.clone().expect("active jobs have a node");
        let demand = job.spec.demand();
        if let Some(node) = self.nodes.get_mut(&node_id) {
            node.allocated = node.allocated.minus(&demand);
        }
        let job = self.jobs.get_mut(job_id).expect("checked above");
        job.remaining_work = job.remaining_at(now);
        job.phase = match outcome {
            Terminal::Completed => Phase::Completed,
            Terminal::Failed => Phase::Failed,
        };
        job.transfer_ends = None;
        job.compute_ends = None;
        job.finished_at = Some(now);
        self.open.remove(job_id);
        let action = match outcome {
            Terminal::Completed => Action::Complete,
            Terminal::Failed => Action::Fail,
        };
        self.event_log
            .push(LogEntry::new(now, actor, action).job(job_id).node(node_id));
        Ok(())
    }

    /// Moves an active, migratable job to another node. Progress is kept;
    /// the job transfers its data from the old node to the new one first.
    pub fn migrate_job(&mut self, job_id: &str, to: &str, actor: &str) -> Result<PlacementPlan, TwinError> {
        let now = self.clock;
        let job = self.job_or_err(job_id)?;
        if !job.phase.is_active() {
            return Err(TwinError::NotActive(job_id.to_string()));
        }
        if !job.spec.migratable {
            return Err(TwinError::NotMigratable(job_id.to_string()));
        }
        let from = job.node.clone().expect("active jobs have a node");
        if from == to {
            return Err(TwinError::SameNode(job_id.to_string()));
        }
        let plan = self.plan_placement(&job.spec, to)?;
        let hop = self.router().route(&from, to).ok_or_else(|| TwinError::Unreachable {
            node: to.to_string(),
            source_id: from.clone(),
        })?;
        let delay = hop.transfer_ms(job.spec.data_mb);
        let demand = job.spec.demand();
        let remaining = job.remaining_at(now);

        let old = self.nodes.get_mut(&from).expect("active job's node exists");
        old.allocated = old.allocated.minus(&demand);
        let new = self.nodes.get_mut(to).expect("checked by plan");
        new.allocated = new.allocated.plus(&demand);

        let job = self.jobs.get_mut(job_id).expect("checked above");
        job.remaining_work = remaining;
        job.node = Some(to.to_string());
        job.placed_at = Some(now);
        job.violation = plan.violation;
        job.start_segment(now, delay);

        self.event_log
            .push(LogEntry::new(now, actor, Action::Migrate).job(job_id).node(to));
        Ok(PlacementPlan {
            transfer_ms: delay,
            ..plan
        })
    }

    // ---- events ----

    /// Applies one scenario event at its timestamp.
    pub fn apply_event(&mut self, event: &ScenarioEvent, actor: &str) -> Result<(), TwinError> {
        if event.t < self.clock {
            return Err(TwinError::TimeRegression {
                clock: self.clock,
                t: event.t,
            });
        }
        self.check_event(&event.kind)?;
        self.clock = event.t;
        let now = event.t;
        let base = LogEntry::new(now, actor, action_of(&event.kind)).with_event(event.clone());
        match &event.kind {
            EventKind::JobArrival(spec) => {
                self.event_log.push(base.job(spec.id.clone()));
                self.open.insert(spec.id.clone());
                self.jobs
                    .insert(spec.id.clone(), JobState::queued(spec.clone(), now));
            }
            EventKind::NodeFail { node } => {
                self.event_log.push(base.node(node.clone()));
                self.fail_node(node);
            }
            EventKind::NodeRecover { node } => {
                self.event_log.push(base.node(node.clone()));
                self.nodes.get_mut(node).expect("checked").up = true;
            }
            EventKind::LinkChange(change) => {
                self.event_log.push(base);
                let link = self
                    .links
                    .iter_mut()
                    .find(|l| l.connects(&change.a, &change.b))
                    .expect("checked");
                link.latency_ms = change.latency_ms;
                link.bandwidth_mbps = change.bandwidth_mbps;
                link.up = change.up;
            }
            EventKind::MetricUpdate {
                node,
                background_load,
            } => {
                self.event_log.push(base.node(node.clone()));
                self.nodes.get_mut(node).expect("checked").background_load = *background_load;
            }
        }
        Ok(())
    }

    fn check_event(&self, kind: &EventKind) -> Result<(), TwinError> {
        match kind {
            EventKind::JobArrival(spec) => {
                if self.jobs.contains_key(&spec.id) {
                    return Err(TwinError::DuplicateJob(spec.id.clone()));
                }
                spec.check().map_err(TwinError::InvalidEvent)?;
                if let Some(src) = &spec.data_source {
                    if !self.resolves_source(src) {
                        return Err(TwinError::UnknownNode(src.clone()));
                    }
                }
            }
            EventKind::NodeFail { node } | EventKind::NodeRecover { node } => {
                self.node_or_err(node)?;
            }
            EventKind::LinkChange(change) => {
                if !self.links.iter().any(|l| l.connects(&change.a, &change.b)) {
                    return Err(TwinError::UnknownLink(change.a.clone(), change.b.clone()));
                }
                if !(change.bandwidth_mbps.is_finite() && change.bandwidth_mbps > 0.0) {
                    return Err(TwinError::InvalidEvent("bandwidth must be > 0".into()));
                }
            }
            EventKind::MetricUpdate {
                node,
                background_load,
            } => {
                self.node_or_err(node)?;
                if !(0.0..=1.0).contains(background_load) {
                    return Err(TwinError::InvalidEvent(
                        "background_load must be within [0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Work on a failed node is lost: migratable jobs go back to the queue
    /// with full duration, the others fail permanently.
    fn fail_node(&mut self, node_id: &str) {
        let now = self.clock;
        let victims: Vec<String> = self
            .open
            .iter()
            .filter(|id| {
                let j = &self.jobs[*id];
                j.phase.is_active() && j.node.as_deref() == Some(node_id)
            })
            .cloned()
            .collect();
        let node = self.nodes.get_mut(node_id).expect("checked");
        node.up = false;
        node.allocated = Resources::default();
        for id in victims {
            let job = self.jobs.get_mut(&id).expect("open ids exist");
            job.transfer_ends = None;
            job.compute_ends = None;
            job.violation = false;
            let entry = LogEntry::new(now, ACTOR_TWIN, Action::Requeue)
                .job(id.clone())
                .node(node_id);
            if job.spec.migratable {
                job.phase = Phase::Queued;
                job.node = None;
                job.placed_at = None;
                job.remaining_work = job.spec.duration_ms;
                job.restarts += 1;
                self.event_log.push(entry);
            } else {
                job.phase = Phase::Failed;
                job.finished_at = Some(now);
                self.open.remove(&id);
                self.event_log.push(LogEntry {
                    action: Action::Fail,
                    ..entry
                });
            }
        }
    }

    // ---- internal timeline ----

    /// Earliest pending transfer end or compute end.
    pub fn next_internal_time(&self) -> Option<Millis> {
        self.active_jobs().filter_map(JobState::next_transition).min()
    }

    /// Ids of active jobs whose next transition is exactly at `t`, in id order.
    pub fn transitions_at(&self, t: Millis) -> Vec<String> {
        self.active_jobs()
            .filter(|j| j.next_transition() == Some(t))
            .map(|j| j.spec.id.clone())
            .collect()
    }

    /// Checks the capacity invariant on every up node, recomputing
    /// allocations from the active jobs.
    pub fn check_capacity(&self) -> Result<(), String> {
        let mut used: BTreeMap<&str, Resources> = BTreeMap::new();
        for job in self.jobs.values().filter(|j| j.phase.is_active()) {
            let node = job.node.as_deref().ok_or_else(|| format!("active job `{}` has no node", job.spec.id))?;
            let n = self.nodes.get(node).ok_or_else(|| format!("job `{}` on unknown node", job.spec.id))?;
            if !n.up {
                return Err(format!("job `{}` active on down node `{node}`", job.spec.id));
            }
            let e = used.entry(node).or_default();
            *e = e.plus(&job.spec.demand());
        }
        for (id, node) in &self.nodes {
            let u = used.get(id.as_str()).copied().unwrap_or_default();
            if u != node.allocated {
                return Err(format!("allocation bookkeeping drifted on `{id}`"));
            }
            if node.up && !u.fits_within(&node.capacity()) {
                return Err(format!("capacity exceeded on `{id}`"));
            }
        }
        Ok(())
    }
}

impl JobState {
    fn start_segment(&mut self, now: Millis, transfer_ms: Millis) {
        if transfer_ms > 0 {
            self.phase = Phase::Transferring;
            self.transfer_ends = Some(now + transfer_ms);
            self.compute_ends = None;
        } else {
            self.phase = Phase::Running;
            self.transfer_ends = None;
            self.compute_ends = Some(now + self.remaining_work);
        }
    }
}

fn action_of(kind: &EventKind) -> Action {
    match kind {
        EventKind::JobArrival(_) => Action::JobArrival,
        EventKind::NodeFail { .. } => Action::NodeFail,
        EventKind::NodeRecover { .. } => Action::NodeRecover,
        EventKind::LinkChange(_) => Action::LinkChange,
        EventKind::MetricUpdate { .. } => Action::MetricUpdate,
    }
}
