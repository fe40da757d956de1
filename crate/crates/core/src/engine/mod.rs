//! Virtual-time simulation loop.
//!
//! The loop merges three timelines: scenario events, internal transitions
//! of active jobs (transfer ends, compute ends) and periodic reschedule
//! ticks. At one virtual instant they are processed in that order, then
//! the scheduler is invoked once if an event batch was applied or a tick
//! fell due. Completions alone never invoke the scheduler.

mod kpi;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::kpi::{compute_kpis, fitness, KpiReport, KpiWindow, Objective};
use crate::scenario::{validate_scenario, Issue, Scenario};
use crate::scheduler::{Decision, Scheduler};
use crate::twin::{
    Action, LogEntry, Millis, Outcome, Phase, Terminal, TwinError, TwinState, ScenarioEvent, ACTOR_ENGINE,
    ACTOR_SCENARIO,
};

fn default_interval() -> Option<Millis> {
    Some(10_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Period of reschedule ticks; `None` disables them.
    #[serde(default = "default_interval")]
    pub reschedule_interval: Option<Millis>,
    /// Reject placements that would violate a latency bound.
    #[serde(default)]
    pub strict_latency: bool,
    /// Window length from the start clock; `None` runs to exhaustion.
    #[serde(default)]
    pub horizon: Option<Millis>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Check the capacity invariant after every decision point.
    #[serde(default)]
    pub check_invariants: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            reschedule_interval: default_interval(),
            strict_latency: false,
            horizon: None,
            rng_seed: 0,
            check_invariants: false,
        }
    }
}

impl EngineConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        if self.reschedule_interval == Some(0) {
            return Err(EngineError::InvalidConfig("reschedule_interval must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidScenario(Vec<Issue>),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("malformed timeline: {0}")]
    MalformedTimeline(String),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error("capacity invariant violated at {t} ms: {message}")]
    InvariantViolated { t: Millis, message: String },
}

/// Result of one decision point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    /// Every decision with its validation outcome, in emission order.
    pub decisions: Vec<(Decision, Outcome)>,
    /// Placements and migrations that changed the twin.
    pub applied: usize,
    pub rejected: usize,
}

/// Validates and applies decisions one by one against the live state.
pub fn apply_decisions(state: &mut TwinState, decisions: Vec<Decision>, actor: &str, strict_latency: bool) -> StepOutcome {
    let mut out = StepOutcome::default();
    let mut seen = BTreeSet::new();
    for decision in decisions {
        let t = state.clock();
        let entry = |action| {
            let mut e = LogEntry::new(t, actor, action);
            e.job = decision.job().map(str::to_string);
            e.node = decision.node().map(str::to_string);
            e
        };
        let result: Result<bool, &'static str> = match &decision {
            Decision::NoOp => Ok(false),
            d if !seen.insert(d.job().unwrap_or_default().to_string()) => Err("duplicate-decision"),
            Decision::Place { job, node } => check_latency(state, job, node, strict_latency)
                .and_then(|()| state.place_job(job, node, actor).map_err(|e| e.code()))
                .map(|_| true),
            Decision::Migrate { job, node } => check_latency(state, job, node, strict_latency)
                .and_then(|()| state.migrate_job(job, node, actor).map_err(|e| e.code()))
                .map(|_| true),
            Decision::Delay { job } => match state.job(job) {
                None => Err("dangling-id"),
                Some(j) if j.phase != Phase::Queued => Err("not-queued"),
                Some(_) => {
                    state.record(entry(Action::Delay));
                    Ok(false)
                }
            },
        };
        let outcome = match result {
            Ok(changed) => {
                out.applied += usize::from(changed);
                Outcome::Applied
            }
            Err(code) => {
                let action = match decision {
                    Decision::Migrate { .. } => Action::Migrate,
                    Decision::Delay { .. } => Action::Delay,
                    _ => Action::Place,
                };
                state.record(entry(action).rejected(code));
                out.rejected += 1;
                Outcome::Rejected(code.to_string())
            }
        };
        out.decisions.push((decision, outcome));
    }
    out
}

fn check_latency(state: &TwinState, job: &str, node: &str, strict: bool) -> Result<(), &'static str> {
    if !strict {
        return Ok(());
    }
    let Some(j) = state.job(job) else {
        return Err("dangling-id");
    };
    match state.plan_placement(&j.spec, node) {
        Ok(plan) if plan.violation => Err("latency-bound"),
        _ => Ok(()),
    }
}

/// One decision point: the scheduler sees the live state, then its
/// decisions are validated and applied in order. Protocol faults the
/// scheduler reports are logged as `fault` entries.
pub fn step(state: &mut TwinState, scheduler: &mut dyn Scheduler, config: &EngineConfig) -> StepOutcome {
    let decisions = scheduler.decide(state);
    let actor = scheduler.name().to_string();
    let t = state.clock();
    for reason in scheduler.drain_faults() {
        state.record(LogEntry::new(t, &actor, Action::Fault).rejected(reason));
    }
    apply_decisions(state, decisions, &actor, config.strict_latency)
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub state: TwinState,
    pub report: KpiReport,
    /// Virtual times at which the scheduler was invoked.
    pub decision_points: Vec<Millis>,
}

impl RunOutput {
    /// The full event and decision log of the run.
    pub fn decision_log(&self) -> &[LogEntry] {
        self.state.event_log()
    }
}

/// Runs a scenario from its initial topology.
pub fn run(scenario: &Scenario, scheduler: &mut dyn Scheduler, config: &EngineConfig) -> Result<RunOutput, EngineError> {
    let issues = validate_scenario(scenario);
    if !issues.is_empty() {
        return Err(EngineError::InvalidScenario(issues));
    }
    run_from(scenario.twin()?, &scenario.events, scheduler, config)
}

/// Runs from an arbitrary state; `events` must not precede its clock.
/// The report covers the window from the state's clock to the end.
pub fn run_from(
    state: TwinState,
    events: &[ScenarioEvent],
    scheduler: &mut dyn Scheduler,
    config: &EngineConfig,
) -> Result<RunOutput, EngineError> {
    config.check()?;
    let start = state.clock();
    let mut last = start;
    for e in events {
        if e.t < last {
            return Err(EngineError::MalformedTimeline(format!(
                "event at {} ms precedes {last} ms",
                e.t
            )));
        }
        last = e.t;
    }
    let start_len = state.event_log().len();
    let mut window = KpiWindow::new(state.clone());
    let mut sim = Simulation::new(state, events, config.clone());
    sim.run(scheduler)?;
    let Simulation {
        state,
        decision_points,
        ..
    } = sim;
    for entry in &state.event_log()[start_len..] {
        window.feed(entry)?;
    }
    let report = window.finish(state.clock());
    Ok(RunOutput {
        state,
        report,
        decision_points,
    })
}

/// Forecasts the KPIs of the next `horizon` ms from `state` with
/// `hypothetical` events injected. The given state is left untouched.
pub fn forecast(
    state: &TwinState,
    hypothetical: &[ScenarioEvent],
    horizon: Millis,
    scheduler: &mut dyn Scheduler,
    config: &EngineConfig,
) -> Result<KpiReport, EngineError> {
    let end = state.clock() + horizon;
    if let Some(e) = hypothetical.iter().find(|e| e.t > end) {
        return Err(EngineError::MalformedTimeline(format!(
            "event at {} ms lies beyond the horizon end {end} ms",
            e.t
        )));
    }
    let config = EngineConfig {
        horizon: Some(horizon),
        ..config.clone()
    };
    Ok(run_from(state.clone(), hypothetical, scheduler, &config)?.report)
}

/// Step-wise engine over one twin.
#[derive(Debug)]
pub struct Simulation<'e> {
    state: TwinState,
    events: &'e [ScenarioEvent],
    next_event: usize,
    config: EngineConfig,
    end: Option<Millis>,
    next_tick: Option<Millis>,
    /// State changed since the scheduler last applied nothing.
    dirty: bool,
    decision_points: Vec<Millis>,
}

impl<'e> Simulation<'e> {
    pub fn new(state: TwinState, events: &'e [ScenarioEvent], config: EngineConfig) -> Self {
        let start = state.clock();
        let next_tick = config.reschedule_interval.map(|i| (start / i + 1) * i);
        Self {
            end: config.horizon.map(|h| start + h),
            state,
            events,
            next_event: 0,
            config,
            next_tick,
            dirty: true,
            decision_points: Vec::new(),
        }
    }

    pub fn state(&self) -> &TwinState {
        &self.state
    }

    pub fn decision_points(&self) -> &[Millis] {
        &self.decision_points
    }

    fn within(&self, t: Millis) -> bool {
        self.end.is_none_or(|end| t <= end)
    }

    fn next_time(&self) -> Option<Millis> {
        let event = self.events.get(self.next_event).map(|e| e.t);
        let internal = self.state.next_internal_time();
        let pending_events = event.is_some_and(|t| self.within(t));
        let tick = self.next_tick.filter(|_| {
            pending_events
                || internal.is_some()
                || (self.dirty && self.state.queued_jobs().next().is_some())
        });
        [event, internal, tick]
            .into_iter()
            .flatten()
            .filter(|&t| self.within(t))
            .min()
    }

    /// Processes one virtual instant. Returns `false` once nothing is left.
    pub fn advance(&mut self, scheduler: &mut dyn Scheduler) -> Result<bool, EngineError> {
        let Some(t) = self.next_time() else {
            return Ok(false);
        };
        self.state.advance_clock(t)?;

        let mut batch = false;
        while let Some(event) = self.events.get(self.next_event).filter(|e| e.t == t) {
            self.state.apply_event(event, ACTOR_SCENARIO)?;
            self.next_event += 1;
            batch = true;
        }

        let due = self.state.transitions_at(t);
        for id in &due {
            match self.state.job(id).map(|j| j.phase) {
                Some(Phase::Transferring) => self.state.finish_transfer(id, ACTOR_ENGINE)?,
                Some(Phase::Running) => self.state.release_job(id, Terminal::Completed, ACTOR_ENGINE)?,
                _ => {}
            }
        }
        if batch || !due.is_empty() {
            self.dirty = true;
        }

        let tick = self.next_tick == Some(t);
        if tick {
            let interval = self.config.reschedule_interval.expect("ticks imply an interval");
            self.next_tick = Some(t + interval);
        }

        if batch || tick {
            self.decision_points.push(t);
            let outcome = step(&mut self.state, scheduler, &self.config);
            self.dirty = outcome.applied > 0;
            if self.config.check_invariants {
                self.state
                    .check_capacity()
                    .map_err(|message| EngineError::InvariantViolated { t, message })?;
            }
        }
        Ok(true)
    }

    /// Runs to exhaustion or to the horizon and logs the end marker.
    pub fn run(&mut self, scheduler: &mut dyn Scheduler) -> Result<(), EngineError> {
        while self.advance(scheduler)? {}
        if let Some(end) = self.end {
            self.state.advance_clock(end)?;
        }
        let t = self.state.clock();
        self.state.record(LogEntry::new(t, ACTOR_ENGINE, Action::End));
        Ok(())
    }

    pub fn into_state(self) -> TwinState {
        self.state
    }
}
