//! KPI reports computed from the event log, and the fitness scalarization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::twin::{Action, LogEntry, Millis, Replayer, Topology, TwinError, TwinState};

const WMS_PER_WH: f64 = 3_600_000.0;

/// Statistics of one run, or of one window of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiReport {
    /// Jobs open at the window start plus jobs arriving within it.
    pub jobs_arrived: u64,
    pub jobs_completed: u64,
    pub jobs_failed: u64,
    /// Mean of completion − arrival over completed jobs.
    pub mean_response_ms: f64,
    /// Nearest-rank 95th percentile of the same responses.
    pub p95_response_ms: Millis,
    /// Jobs whose most recent placement exceeds their latency bound.
    pub latency_violation_count: u64,
    pub energy_wh: f64,
    /// Time-weighted allocated/available cpu over up nodes.
    pub mean_cpu_utilization: f64,
    pub migrations: u64,
    pub restarts: u64,
    /// Window start to the last completion or failure.
    pub makespan_ms: Millis,
    /// Rejected decisions plus scheduler protocol faults.
    pub decision_faults: u64,
    pub window_ms: Millis,
    /// Every node at full power for the whole window.
    pub energy_upper_bound_wh: f64,
}

impl KpiReport {
    /// Flat `key=value` lines, one per field, in declaration order.
    pub fn to_kv(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for key in FIELD_ORDER {
                out.push_str(&format!("{key}={}\n", map[key]));
            }
        }
        out
    }
}

const FIELD_ORDER: [&str; 14] = [
    "jobs_arrived",
    "jobs_completed",
    "jobs_failed",
    "mean_response_ms",
    "p95_response_ms",
    "latency_violation_count",
    "energy_wh",
    "mean_cpu_utilization",
    "migrations",
    "restarts",
    "makespan_ms",
    "decision_faults",
    "window_ms",
    "energy_upper_bound_wh",
];

/// Replays log entries on top of a starting state and integrates the
/// window's statistics along the way.
#[derive(Debug, Clone)]
pub struct KpiWindow {
    replayer: Replayer,
    start: Millis,
    last_t: Millis,
    energy_wms: f64,
    cpu_ms: f64,
    population: BTreeSet<String>,
    completed: u64,
    failed: u64,
    responses: Vec<Millis>,
    migrations: u64,
    restarts: u64,
    faults: u64,
    last_terminal: Option<Millis>,
}

impl KpiWindow {
    /// A window opening at `state`'s clock.
    pub fn new(state: TwinState) -> Self {
        let start = state.clock();
        let population = state.open_jobs().map(|j| j.spec.id.clone()).collect();
        Self {
            replayer: Replayer::resume(state),
            start,
            last_t: start,
            energy_wms: 0.0,
            cpu_ms: 0.0,
            population,
            completed: 0,
            failed: 0,
            responses: Vec::new(),
            migrations: 0,
            restarts: 0,
            faults: 0,
            last_terminal: None,
        }
    }

    fn integrate_to(&mut self, t: Millis) {
        if t <= self.last_t {
            return;
        }
        let dt = (t - self.last_t) as f64;
        let state = self.replayer.state();
        self.energy_wms += state.power_draw() * dt;
        let (used, cap) = state
            .nodes()
            .values()
            .filter(|n| n.up)
            .fold((0u64, 0u64), |(u, c), n| (u + n.allocated.cpu_m, c + n.spec.cpu_m));
        if cap > 0 {
            self.cpu_ms += used as f64 / cap as f64 * dt;
        }
        self.last_t = t;
    }

    pub fn feed(&mut self, entry: &LogEntry) -> Result<(), TwinError> {
        self.integrate_to(entry.t);
        self.replayer.feed(entry)?;
        let applied = entry.outcome.is_applied();
        let job = entry.job.as_deref().unwrap_or_default();
        match entry.action {
            Action::JobArrival => {
                self.population.insert(job.to_string());
            }
            Action::Complete => {
                self.completed += 1;
                let arrival = self.replayer.state().job(job).map_or(entry.t, |j| j.arrival);
                self.responses.push(entry.t - arrival);
                self.last_terminal = Some(entry.t);
            }
            Action::Fail if applied => {
                self.failed += 1;
                self.last_terminal = Some(entry.t);
            }
            Action::Migrate if applied => self.migrations += 1,
            Action::Requeue => self.restarts += 1,
            Action::Fault => self.faults += 1,
            a if a.is_decision() && !applied => self.faults += 1,
            _ => {}
        }
        Ok(())
    }

    pub fn state(&self) -> &TwinState {
        self.replayer.state()
    }

    /// Closes the window at `end` (at least the last fed entry's time).
    pub fn finish(mut self, end: Millis) -> KpiReport {
        self.integrate_to(end);
        let end = self.last_t;
        let state = self.replayer.state();
        let mut responses = std::mem::take(&mut self.responses);
        responses.sort_unstable();
        let n = responses.len();
        let mean_response_ms = if n == 0 {
            0.0
        } else {
            responses.iter().sum::<u64>() as f64 / n as f64
        };
        let p95_response_ms = if n == 0 {
            0
        } else {
            responses[(n * 95).div_ceil(100) - 1]
        };
        let latency_violation_count = self
            .population
            .iter()
            .filter(|id| state.job(id).is_some_and(|j| j.violation))
            .count() as u64;
        let window_ms = end - self.start;
        let max_power: f64 = state.nodes().values().map(|n| n.spec.power_max_w).sum();
        KpiReport {
            jobs_arrived: self.population.len() as u64,
            jobs_completed: self.completed,
            jobs_failed: self.failed,
            mean_response_ms,
            p95_response_ms,
            latency_violation_count,
            energy_wh: self.energy_wms / WMS_PER_WH,
            mean_cpu_utilization: if window_ms == 0 {
                0.0
            } else {
                self.cpu_ms / window_ms as f64
            },
            migrations: self.migrations,
            restarts: self.restarts,
            makespan_ms: self.last_terminal.map_or(0, |t| t - self.start),
            decision_faults: self.faults,
            window_ms,
            energy_upper_bound_wh: max_power * window_ms as f64 / WMS_PER_WH,
        }
    }
}

/// KPIs of a whole log, replayed over the topology it started from. The
/// window ends at the last entry.
pub fn compute_kpis(event_log: &[LogEntry], topology: &Topology) -> Result<KpiReport, TwinError> {
    let mut window = KpiWindow::new(TwinState::new(topology.clone())?);
    for entry in event_log {
        window.feed(entry)?;
    }
    let end = event_log.last().map_or(0, |e| e.t);
    Ok(window.finish(end))
}

/// Weights of the fitness scalarization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// α·completed/arrived − β·mean_response/window − γ·energy/upper_bound
/// − δ·violations/arrived. Terms with a zero denominator are 0.
pub fn fitness(report: &KpiReport, objective: &Objective) -> f64 {
    let arrived = report.jobs_arrived as f64;
    objective.alpha * ratio(report.jobs_completed as f64, arrived)
        - objective.beta * ratio(report.mean_response_ms, report.window_ms as f64)
        - objective.gamma * ratio(report.energy_wh, report.energy_upper_bound_wh)
        - objective.delta * ratio(report.latency_violation_count as f64, arrived)
}
