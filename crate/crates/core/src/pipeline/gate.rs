use std::collections::VecDeque;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{PipelineError, ReviewTicket, SnapshotStore};
use crate::feedback::Feedback;

#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome {
    /// Feedback for the ticket has been accepted by the store.
    Submitted,
    /// Nobody is answering now; the run stays `AwaitingFeedback`.
    Parked,
}

/// Rendezvous between a running pipeline and whoever answers its tickets.
///
/// The pipeline has already published the ticket in the store when
/// `wait` is called. Implementations either get feedback accepted through
/// [`SnapshotStore::submit_feedback`] or park.
pub trait ReviewGate: Send + Sync {
    fn wait(&self, store: &SnapshotStore, ticket: &ReviewTicket) -> Result<GateOutcome, PipelineError>;
}

/// Answers tickets from a fixed queue, in order. Useful for tests and for
/// replaying a recorded feedback transcript.
#[derive(Debug, Default)]
pub struct ScriptedGate {
    queue: Mutex<VecDeque<Feedback>>,
    seen: Mutex<Vec<ReviewTicket>>,
}

impl ScriptedGate {
    pub fn new(feedback: impl IntoIterator<Item = Feedback>) -> Self {
        Self {
            queue: Mutex::new(feedback.into_iter().collect()),
            seen: Mutex::default(),
        }
    }

    /// Tickets received so far.
    pub fn tickets(&self) -> Vec<ReviewTicket> {
        self.seen.lock().unwrap().clone()
    }
}

impl ReviewGate for ScriptedGate {
    fn wait(&self, store: &SnapshotStore, ticket: &ReviewTicket) -> Result<GateOutcome, PipelineError> {
        self.seen.lock().unwrap().push(ticket.clone());
        let Some(feedback) = self.queue.lock().unwrap().pop_front() else {
            return Ok(GateOutcome::Parked);
        };
        store.submit_feedback(&ticket.run_id, ticket.stage, ticket.iteration, &feedback)?;
        Ok(GateOutcome::Submitted)
    }
}

/// Never waits: every ticket parks the run for a later `resume`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ParkingGate;

impl ReviewGate for ParkingGate {
    fn wait(&self, _store: &SnapshotStore, _ticket: &ReviewTicket) -> Result<GateOutcome, PipelineError> {
        Ok(GateOutcome::Parked)
    }
}

/// Blocks until feedback arrives through the store (review service, CLI, or
/// another process), polling at `interval`. Parks after `timeout`, if set.
#[derive(Debug, Clone, Copy)]
pub struct PollingGate {
    pub interval: Duration,
    pub timeout: Option<Duration>,
}

impl Default for PollingGate {
    fn default() -> Self {
        Self {
            interval: Duration::from_millis(500),
            timeout: None,
        }
    }
}

impl ReviewGate for PollingGate {
    fn wait(&self, store: &SnapshotStore, ticket: &ReviewTicket) -> Result<GateOutcome, PipelineError> {
        let started = Instant::now();
        let pending = store.pending_path(&ticket.run_id);
        let feedback = store.feedback_path(&ticket.run_id, ticket.stage, ticket.iteration);
        loop {
            if !pending.exists() && feedback.exists() {
                return Ok(GateOutcome::Submitted);
            }
            if self.timeout.is_some_and(|t| started.elapsed() >= t) {
                return Ok(GateOutcome::Parked);
            }
            thread::sleep(self.interval);
        }
    }
}
