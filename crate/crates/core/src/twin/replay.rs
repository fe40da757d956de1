//! Rebuilds a twin from its initial topology and its event log.

use super::{
    Action, LogEntry, Phase, Terminal, Topology, TwinError, TwinState, ACTOR_TWIN,
};

/// Feeds log entries one at a time into a fresh twin. Each state-changing
/// entry is re-executed through the twin's own operations and the entry
/// they produce must match the fed one exactly.
#[derive(Debug, Clone)]
pub struct Replayer {
    state: TwinState,
    /// Number of entries of `state.event_log` matched against fed entries.
    cursor: usize,
}

impl Replayer {
    pub fn new(topology: Topology) -> Result<Self, TwinError> {
        Ok(Self {
            state: TwinState::new(topology)?,
            cursor: 0,
        })
    }

    /// Continues from an existing state; entries fed next must extend
    /// its log.
    pub fn resume(state: TwinState) -> Self {
        let cursor = state.event_log.len();
        Self { state, cursor }
    }

    pub fn state(&self) -> &TwinState {
        &self.state
    }

    pub fn into_state(self) -> TwinState {
        self.state
    }

    pub fn feed(&mut self, entry: &LogEntry) -> Result<(), TwinError> {
        let malformed = |m: String| TwinError::MalformedLog(m);
        if entry.t < self.state.clock {
            return Err(malformed(format!(
                "entry at {} ms precedes clock {} ms",
                entry.t, self.state.clock
            )));
        }
        if entry.actor == ACTOR_TWIN {
            // Derived by an earlier event entry; only verify.
            let job_id = entry.job.as_deref().unwrap_or_default();
            let expected = match entry.action {
                Action::Requeue => Phase::Queued,
                Action::Fail => Phase::Failed,
                other => return Err(malformed(format!("unexpected derived action {other:?}"))),
            };
            let ok = self.state.event_log.get(self.cursor) == Some(entry)
                && self.state.job(job_id).is_some_and(|j| j.phase == expected);
            return if ok {
                self.cursor += 1;
                Ok(())
            } else {
                Err(malformed(format!("derived entry for `{job_id}` does not match state")))
            };
        }
        let mark = self.state.event_log.len();
        if mark != self.cursor {
            return Err(malformed(format!(
                "derived entries missing before {:?} at {} ms",
                entry.action, entry.t
            )));
        }

        if entry.action.is_event() {
            let event = entry
                .event
                .as_ref()
                .ok_or_else(|| malformed("event entry without payload".into()))?;
            if event.t != entry.t {
                return Err(malformed("event payload time differs from entry time".into()));
            }
            self.state.apply_event(event, &entry.actor)?;
        } else {
            self.state.advance_clock(entry.t)?;
            let job = || {
                entry
                    .job
                    .as_deref()
                    .ok_or_else(|| malformed(format!("{:?} entry without job", entry.action)))
            };
            let node = || {
                entry
                    .node
                    .as_deref()
                    .ok_or_else(|| malformed(format!("{:?} entry without node", entry.action)))
            };
            if !entry.outcome.is_applied() {
                self.state.record(entry.clone());
                self.cursor = mark + 1;
                return Ok(());
            }
            match entry.action {
                Action::Place => {
                    self.state.place_job(job()?, node()?, &entry.actor)?;
                }
                Action::Migrate => {
                    self.state.migrate_job(job()?, node()?, &entry.actor)?;
                }
                Action::TransferDone => self.state.finish_transfer(job()?, &entry.actor)?,
                Action::Complete => self.state.release_job(job()?, Terminal::Completed, &entry.actor)?,
                Action::Fail => self.state.release_job(job()?, Terminal::Failed, &entry.actor)?,
                Action::Delay | Action::Fault | Action::Heartbeat | Action::End | Action::Shutdown => {
                    self.state.record(entry.clone())
                }
                Action::Requeue => return Err(malformed("requeue outside a node failure".into())),
                _ => unreachable!("event actions handled above"),
            }
        }

        match self.state.event_log.get(mark) {
            Some(produced) if produced == entry => {
                self.cursor = mark + 1;
                Ok(())
            }
            _ => Err(malformed(format!(
                "re-executing {:?} at {} ms produced a different entry",
                entry.action, entry.t
            ))),
        }
    }
}

impl TwinState {
    /// Replays `log` over `topology`.
    pub fn replay(topology: Topology, log: &[LogEntry]) -> Result<TwinState, TwinError> {
        let mut r = Replayer::new(topology)?;
        for entry in log {
            r.feed(entry)?;
        }
        r.finish()
    }
}

impl Replayer {
    /// Ends the replay, failing if derived entries were left unmatched.
    pub fn finish(self) -> Result<TwinState, TwinError> {
        if self.cursor != self.state.event_log.len() {
            return Err(TwinError::MalformedLog("log ends before derived entries".into()));
        }
        Ok(self.state)
    }
}
