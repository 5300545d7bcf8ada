//! Local-resource-manager abstraction.
//!
//! [`JobExecutor`] is the pluggable submit/cancel/status/wait surface
//! over batch-system backends. Two backends ship: [`local::LocalExecutor`]
//! runs real processes on the launch host, [`simbatch::SimBatchExecutor`]
//! queues jobs on the simulated cluster. Any test written against the
//! trait passes on both for specs both can satisfy.
//!
//! [`script`] renders batch submit scripts from data-defined dialect
//! templates.

pub mod local;
pub mod script;
pub mod simbatch;

use crate::model::{EventRecord, JobState, Time, ValidatedJobSpec, ValidationError};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// What a backend can do.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Capability {
    RealExec,
    Simulated,
    ScriptRendering,
}

/// Identity and capabilities of a registered backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutorDescriptor {
    pub name: String,
    pub capabilities: BTreeSet<Capability>,
}

impl ExecutorDescriptor {
    pub fn new(name: impl Into<String>, capabilities: impl IntoIterator<Item = Capability>) -> Self {
        ExecutorDescriptor {
            name: name.into(),
            capabilities: capabilities.into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("executor name {0} already registered")]
pub struct DuplicateExecutor(pub String);

/// Name-keyed registry of backend descriptors; names must be unique.
#[derive(Clone, Debug, Default)]
pub struct ExecutorRegistry {
    descriptors: BTreeMap<String, ExecutorDescriptor>,
}

impl ExecutorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry listing the built-in backends.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(ExecutorDescriptor::new(
            "local",
            [Capability::RealExec, Capability::ScriptRendering],
        ))
        .unwrap();
        reg.register(ExecutorDescriptor::new(
            "sim-batch",
            [Capability::Simulated, Capability::ScriptRendering],
        ))
        .unwrap();
        reg
    }

    pub fn register(&mut self, descriptor: ExecutorDescriptor) -> Result<(), DuplicateExecutor> {
        if self.descriptors.contains_key(&descriptor.name) {
            return Err(DuplicateExecutor(descriptor.name));
        }
        self.descriptors.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ExecutorDescriptor> {
        self.descriptors.get(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.descriptors.keys().map(String::as_str).collect()
    }
}

/// Snapshot of one job as seen by its backend.
///
/// Invariants maintained by every backend: `exit_code` is present iff
/// the state is COMPLETED or FAILED (COMPLETED implies 0); CANCELED
/// carries no exit code; `start_time` is set iff the job reached
/// ACTIVE, `end_time` iff it is terminal. Failures that do not come
/// from a process exit (walltime, launch errors, signals) carry the
/// sentinel exit code -1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobHandle {
    pub job_id: String,
    pub spec: ValidatedJobSpec,
    pub state: JobState,
    pub exit_code: Option<i32>,
    pub native_id: Option<String>,
    pub submit_time: Option<Time>,
    pub start_time: Option<Time>,
    pub end_time: Option<Time>,
}

impl JobHandle {
    pub fn new(job_id: impl Into<String>, spec: ValidatedJobSpec) -> Self {
        JobHandle {
            job_id: job_id.into(),
            spec,
            state: JobState::New,
            exit_code: None,
            native_id: None,
            submit_time: None,
            start_time: None,
            end_time: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        use crate::model::StateMachine;
        self.state.is_terminal()
    }
}

/// Exit code recorded when a job fails without a process exit status.
pub const EXIT_CODE_NONE: i32 = -1;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum LrmError {
    #[error("submission rejected: {0}")]
    Submission(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unknown job {0}")]
    NotFound(String),
    #[error("timed out waiting for job {0}")]
    Timeout(String),
}

/// Result of a cancel request. `AlreadyTerminal` is an idempotence
/// signal, not a failure: the job was left untouched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CancelOutcome {
    Canceled,
    AlreadyTerminal,
}

/// The executor contract. Durations and timestamps are in the
/// backend's native unit: milliseconds for real backends, ticks for
/// simulated ones.
pub trait JobExecutor {
    fn descriptor(&self) -> ExecutorDescriptor;

    /// Submits a validated spec. The returned handle starts QUEUED;
    /// the job eventually reaches a terminal state, with every
    /// transition emitted as an event record.
    fn submit(&self, spec: &ValidatedJobSpec) -> Result<JobHandle, LrmError>;

    /// Cancels a queued job before it starts or terminates an active
    /// one; terminal jobs are left unchanged.
    fn cancel(&self, job_id: &str) -> Result<CancelOutcome, LrmError>;

    /// Current snapshot. Successive snapshots never regress along the
    /// job transition graph.
    fn status(&self, job_id: &str) -> Result<JobHandle, LrmError>;

    /// Blocks until the job is terminal or the timeout elapses. Never
    /// misses a terminal transition that lands before or during the
    /// wait, and never busy-polls on real backends.
    fn wait(&self, job_id: &str, timeout: Option<u64>) -> Result<JobHandle, LrmError>;

    /// Every event record emitted so far, in emission order.
    fn events(&self) -> Vec<EventRecord>;
}

/// Wall-clock milliseconds since the Unix epoch.
pub(crate) fn wallclock_ms() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Monotone wall-clock source: never yields a smaller value than it
/// already returned, so per-subject event sequences stay nondecreasing
/// even if the system clock steps.
#[derive(Debug, Default)]
pub(crate) struct MonotoneMs(AtomicU64);

impl MonotoneMs {
    pub(crate) fn new() -> Self {
        MonotoneMs(AtomicU64::new(0))
    }

    pub(crate) fn now(&self) -> u64 {
        let wall = wallclock_ms();
        self.0.fetch_max(wall, Ordering::SeqCst);
        self.0.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_duplicate_names() {
        let mut reg = ExecutorRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["local", "sim-batch"]);
        let dup = ExecutorDescriptor::new("local", [Capability::RealExec]);
        assert_eq!(reg.register(dup), Err(DuplicateExecutor("local".into())));
    }

    #[test]
    fn monotone_clock_never_regresses() {
        let clock = MonotoneMs::new();
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }
}
