//! Scheduler contract and the built-in schedulers.
//!
//! A scheduler sees a complete [`TwinState`] and answers with a list of
//! [`Decision`]s. Built-ins process queued jobs in (priority desc, arrival
//! asc, id asc) order and reserve capacity for earlier picks within the
//! same call, so every placement they return is feasible against the
//! snapshot.

mod agent;

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use self::agent::{AgentError, AgentScheduler, DEFAULT_AGENT_DEADLINE, PROTOCOL_VERSION};
use crate::twin::{
    node_power, JobSpec, JobState, NodeState, Phase, Resources, Route, Router, TwinError, TwinState,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Place { job: String, node: String },
    Delay { job: String },
    Migrate { job: String, node: String },
    NoOp,
}

impl Decision {
    pub fn place(job: impl Into<String>, node: impl Into<String>) -> Self {
        Decision::Place {
            job: job.into(),
            node: node.into(),
        }
    }

    pub fn delay(job: impl Into<String>) -> Self {
        Decision::Delay { job: job.into() }
    }

    pub fn migrate(job: impl Into<String>, node: impl Into<String>) -> Self {
        Decision::Migrate {
            job: job.into(),
            node: node.into(),
        }
    }

    pub fn job(&self) -> Option<&str> {
        match self {
            Decision::Place { job, .. } | Decision::Delay { job } | Decision::Migrate { job, .. } => Some(job),
            Decision::NoOp => None,
        }
    }

    pub fn node(&self) -> Option<&str> {
        match self {
            Decision::Place { node, .. } | Decision::Migrate { node, .. } => Some(node),
            _ => None,
        }
    }
}

/// Parameters of the weighted scorer. Every component lies in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    pub w_fit: f64,
    pub w_latency: f64,
    pub w_energy: f64,
    pub w_balance: f64,
    /// Minimum score gain for migrating a running job.
    pub migrate_threshold: f64,
}

impl Default for WeightVector {
    fn default() -> Self {
        Self {
            w_fit: 0.25,
            w_latency: 0.25,
            w_energy: 0.25,
            w_balance: 0.25,
            migrate_threshold: 0.2,
        }
    }
}

impl WeightVector {
    pub fn new(w_fit: f64, w_latency: f64, w_energy: f64, w_balance: f64, migrate_threshold: f64) -> Self {
        Self {
            w_fit,
            w_latency,
            w_energy,
            w_balance,
            migrate_threshold,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.w_fit, self.w_latency, self.w_energy, self.w_balance, self.migrate_threshold]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Total order used to break fitness ties.
    pub fn lexicographic_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let (a, b) = (self.to_array(), other.to_array());
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fit={:.4} latency={:.4} energy={:.4} balance={:.4} theta={:.4}",
            self.w_fit, self.w_latency, self.w_energy, self.w_balance, self.migrate_threshold
        )
    }
}

/// Anything that turns a twin snapshot into decisions.
pub trait Scheduler: Send {
    /// Identity recorded as the actor of every decision.
    fn name(&self) -> &str;

    fn decide(&mut self, snapshot: &TwinState) -> Vec<Decision>;

    /// Protocol faults since the last call, one reason per fault.
    fn drain_faults(&mut self) -> Vec<String> {
        Vec::new()
    }
}

impl<S: Scheduler + ?Sized> Scheduler for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn decide(&mut self, snapshot: &TwinState) -> Vec<Decision> {
        (**self).decide(snapshot)
    }

    fn drain_faults(&mut self) -> Vec<String> {
        (**self).drain_faults()
    }
}

/// The in-process schedulers.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    FirstFit,
    BestFit,
    Weighted(WeightVector),
}

impl Builtin {
    pub const NAMES: [&'static str; 3] = ["first-fit", "best-fit", "weighted"];

    /// `weighted` uses [`WeightVector::default`].
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "first-fit" => Some(Builtin::FirstFit),
            "best-fit" => Some(Builtin::BestFit),
            "weighted" => Some(Builtin::Weighted(WeightVector::default())),
            _ => None,
        }
    }

    pub fn all_default() -> [Builtin; 3] {
        [
            Builtin::FirstFit,
            Builtin::BestFit,
            Builtin::Weighted(WeightVector::default()),
        ]
    }
}

impl Scheduler for Builtin {
    fn name(&self) -> &str {
        match self {
            Builtin::FirstFit => "first-fit",
            Builtin::BestFit => "best-fit",
            Builtin::Weighted(_) => "weighted",
        }
    }

    fn decide(&mut self, snapshot: &TwinState) -> Vec<Decision> {
        match self {
            Builtin::FirstFit => decide_first_fit(snapshot),
            Builtin::BestFit => decide_best_fit(snapshot),
            Builtin::Weighted(w) => decide_weighted(snapshot, w),
        }
    }
}

/// Queued jobs in scheduling order: priority desc, arrival asc, id asc.
pub fn queue_order(state: &TwinState) -> Vec<&JobState> {
    let mut queued: Vec<&JobState> = state.queued_jobs().collect();
    queued.sort_by_key(|j| (Reverse(j.spec.priority), j.arrival, j.spec.id.as_str()));
    queued
}

/// Capacity claimed by earlier decisions of the same call.
#[derive(Default)]
struct Reservations(BTreeMap<String, Resources>);

impl Reservations {
    fn allocation(&self, node: &NodeState) -> Resources {
        match self.0.get(&node.spec.id) {
            Some(r) => node.allocated.plus(r),
            None => node.allocated,
        }
    }

    fn reserve(&mut self, node: &str, demand: &Resources) {
        let e = self.0.entry(node.to_string()).or_default();
        *e = e.plus(demand);
    }
}

/// Route to the data source when `job` fits on `node` given `allocated`.
/// `Some(None)` means feasible with no data source.
fn feasible(
    state: &TwinState,
    router: &Router<'_>,
    job: &JobSpec,
    node: &NodeState,
    allocated: &Resources,
) -> Option<Option<Route>> {
    if !node.up || !job.allows(&node.spec) {
        return None;
    }
    if !job.demand().fits_within(&node.capacity().minus(allocated)) {
        return None;
    }
    state.source_route_with(router, job, &node.spec.id).ok()
}

fn fraction(v: u64, cap: u64) -> f64 {
    if cap == 0 {
        0.0
    } else {
        v as f64 / cap as f64
    }
}

/// 1 − mean over cpu/mem/storage of the free fraction left after placing.
fn s_fit(node: &NodeState, allocated: &Resources, demand: &Resources) -> f64 {
    let cap = node.capacity().as_array();
    let left = node.capacity().minus(&allocated.plus(demand)).as_array();
    let mean = (0..3).map(|i| fraction(left[i], cap[i])).sum::<f64>() / 3.0;
    1.0 - mean
}

fn s_latency(job: &JobSpec, route: Option<&Route>) -> f64 {
    match (job.latency_bound_ms, route) {
        (Some(0), Some(r)) => {
            if r.latency_ms == 0 {
                1.0
            } else {
                0.0
            }
        }
        (Some(bound), Some(r)) => (1.0 - r.latency_ms as f64 / bound as f64).max(0.0),
        _ => 1.0,
    }
}

fn s_energy(node: &NodeState, allocated: &Resources, demand: &Resources) -> f64 {
    if node.spec.power_max_w <= 0.0 {
        return 1.0;
    }
    let before = node_power(&node.spec, node.utilization_with(allocated));
    let after = node_power(&node.spec, node.utilization_with(&allocated.plus(demand)));
    (1.0 - (after - before) / node.spec.power_max_w).clamp(0.0, 1.0)
}

fn s_balance(node: &NodeState, allocated: &Resources, demand: &Resources) -> f64 {
    1.0 - node.utilization_with(&allocated.plus(demand))
}

fn weighted_score(job: &JobSpec, node: &NodeState, allocated: &Resources, route: Option<&Route>, w: &WeightVector) -> f64 {
    let total = w.w_fit + w.w_latency + w.w_energy + w.w_balance;
    if total <= 0.0 {
        return 0.0;
    }
    let demand = job.demand();
    let sum = w.w_fit * s_fit(node, allocated, &demand)
        + w.w_latency * s_latency(job, route)
        + w.w_energy * s_energy(node, allocated, &demand)
        + w.w_balance * s_balance(node, allocated, &demand);
    sum / total
}

/// Weighted score of placing `job` on `node_id` in `state`, normalised by
/// the weight sum so that it is a fraction; 0 when all weights are zero.
pub fn score_weighted(state: &TwinState, job: &JobSpec, node_id: &str, w: &WeightVector) -> Result<f64, TwinError> {
    let plan = state.plan_placement(job, node_id)?;
    let node = state.node(node_id).expect("checked by plan");
    Ok(weighted_score(job, node, &node.allocated, plan.source_route.as_ref(), w))
}

/// Greedy placement loop shared by the built-ins. `pick` returns the
/// chosen node among feasible candidates given in id order.
fn place_queue<F>(state: &TwinState, reservations: &mut Reservations, mut pick: F) -> Vec<Decision>
where
    F: FnMut(&JobSpec, &[(&NodeState, Resources, Option<Route>)]) -> Option<usize>,
{
    let router = state.router();
    let mut out = Vec::new();
    for job in queue_order(state) {
        let candidates: Vec<(&NodeState, Resources, Option<Route>)> = state
            .nodes()
            .values()
            .filter_map(|n| {
                let alloc = reservations.allocation(n);
                feasible(state, &router, &job.spec, n, &alloc).map(|route| (n, alloc, route))
            })
            .collect();
        match pick(&job.spec, &candidates) {
            Some(i) => {
                let node = &candidates[i].0.spec.id;
                reservations.reserve(node, &job.spec.demand());
                out.push(Decision::place(&job.spec.id, node));
            }
            None => out.push(Decision::delay(&job.spec.id)),
        }
    }
    out
}

/// Index of the highest score; the first (lowest id) wins ties.
fn argmax(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub fn decide_first_fit(snapshot: &TwinState) -> Vec<Decision> {
    place_queue(snapshot, &mut Reservations::default(), |_, c| (!c.is_empty()).then_some(0))
}

pub fn decide_best_fit(snapshot: &TwinState) -> Vec<Decision> {
    place_queue(snapshot, &mut Reservations::default(), |job, c| {
        let demand = job.demand();
        argmax(c.iter().map(|(n, alloc, _)| s_fit(n, alloc, &demand)))
    })
}

pub fn decide_weighted(snapshot: &TwinState, w: &WeightVector) -> Vec<Decision> {
    let mut reservations = Reservations::default();
    let mut out = place_queue(snapshot, &mut reservations, |job, c| {
        argmax(c.iter().map(|(n, alloc, route)| weighted_score(job, n, alloc, route.as_ref(), w)))
    });

    let router = snapshot.router();
    for job in snapshot.active_jobs() {
        if job.phase != Phase::Running || !job.spec.migratable {
            continue;
        }
        let current_id = job.node.as_deref().expect("running jobs have a node");
        let Some(current) = snapshot.node(current_id) else {
            continue;
        };
        let demand = job.spec.demand();
        let own = reservations.allocation(current).minus(&demand);
        let current_score = match snapshot.source_route_with(&router, &job.spec, current_id) {
            Ok(route) => weighted_score(&job.spec, current, &own, route.as_ref(), w),
            Err(_) => 0.0,
        };
        let candidates: Vec<(&NodeState, f64)> = snapshot
            .nodes()
            .values()
            .filter(|n| n.spec.id != current_id)
            .filter(|n| router.route(current_id, &n.spec.id).is_some())
            .filter_map(|n| {
                let alloc = reservations.allocation(n);
                feasible(snapshot, &router, &job.spec, n, &alloc)
                    .map(|route| (n, weighted_score(&job.spec, n, &alloc, route.as_ref(), w)))
            })
            .collect();
        if let Some(i) = argmax(candidates.iter().map(|(_, s)| *s)) {
            let (target, score) = candidates[i];
            if score - current_score > w.migrate_threshold {
                reservations.reserve(&target.spec.id, &demand);
                out.push(Decision::migrate(&job.spec.id, &target.spec.id));
            }
        }
    }
    out
}
