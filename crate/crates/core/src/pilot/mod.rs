//! Pilot runtime: allocation acquisition, nested instances, balancing.
//!
//! A pilot is a placeholder batch job. Once the job is granted, the
//! agent partitions the allocation's nodes into `k` disjoint contiguous
//! subsets, starts one scheduler instance per subset, and balances
//! incoming tasks across the instances. Instance events are converted
//! into pilot-level task-state updates and fanned out to watchers.
//!
//! Two drivers share this module's logic: [`sim::SimPilot`] runs inside
//! the simulated world's event loop, [`real::RealPilot`] runs instance
//! threads against the local backend.

pub mod real;
pub mod sim;

use crate::model::{
    EventRecord, ResourceSpec, StateValue, TaskState, Time, ValidationError,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Request for a pilot: node-level resources, a walltime, and how many
/// nested scheduler instances to bootstrap inside the allocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotDescription {
    pub resources: ResourceSpec,
    pub walltime_s: u64,
    pub instance_count: u32,
    pub platform: String,
}

impl PilotDescription {
    pub fn new(node_count: u32, instance_count: u32, walltime_s: u64) -> Self {
        PilotDescription {
            resources: ResourceSpec {
                node_count: node_count as i64,
                ..ResourceSpec::default()
            },
            walltime_s,
            instance_count,
            platform: String::new(),
        }
    }

    pub fn node_count(&self) -> u32 {
        self.resources.node_count.max(0) as u32
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut err = ValidationError { violations: vec![] };
        if self.resources.node_count < 1 {
            err.violations.push(crate::model::FieldViolation {
                field: "resources.node_count".into(),
                reason: "pilot needs at least one node".into(),
            });
        }
        if self.instance_count < 1 {
            err.violations.push(crate::model::FieldViolation {
                field: "instance_count".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.resources.node_count >= 1 && self.instance_count as i64 > self.resources.node_count
        {
            err.violations.push(crate::model::FieldViolation {
                field: "instance_count".into(),
                reason: "exceeds node_count".into(),
            });
        }
        if self.walltime_s < 1 {
            err.violations.push(crate::model::FieldViolation {
                field: "walltime_s".into(),
                reason: "must be >= 1".into(),
            });
        }
        if err.violations.is_empty() {
            Ok(())
        } else {
            Err(err)
        }
    }
}

/// One granted node: identity plus schedulable core/GPU counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationNode {
    pub node_id: String,
    pub cores: u32,
    pub gpus: u32,
}

/// The node list granted to a pilot job, in acquisition order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub nodes: Vec<AllocationNode>,
    pub source_job_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("cannot split {node_count} nodes into {requested} subsets")]
pub struct InvalidPartition {
    pub node_count: usize,
    pub requested: u32,
}

/// Splits an allocation into `k` contiguous, pairwise-disjoint subsets
/// covering every node. The first `n mod k` subsets get `ceil(n/k)`
/// nodes, the rest `floor(n/k)`.
pub fn partition_nodes(
    allocation: &Allocation,
    k: u32,
) -> Result<Vec<Vec<AllocationNode>>, InvalidPartition> {
    let n = allocation.nodes.len();
    if k < 1 || (k as usize) > n {
        return Err(InvalidPartition {
            node_count: n,
            requested: k,
        });
    }
    let k = k as usize;
    let small = n / k;
    let remainder = n % k;
    let mut subsets = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let size = if i < remainder { small + 1 } else { small };
        subsets.push(allocation.nodes[cursor..cursor + size].to_vec());
        cursor += size;
    }
    debug_assert_eq!(cursor, n);
    Ok(subsets)
}

/// Task-routing policy across instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalancingPolicy {
    #[default]
    RoundRobin,
    LeastLoaded,
}

/// Picks the instance for the next task. `loads` are queued+executing
/// counts per instance; `cursor` is the round-robin position, advanced
/// on every call.
pub fn choose_instance(policy: BalancingPolicy, loads: &[usize], cursor: &mut usize) -> usize {
    debug_assert!(!loads.is_empty());
    match policy {
        BalancingPolicy::RoundRobin => {
            let idx = *cursor % loads.len();
            *cursor += 1;
            idx
        }
        BalancingPolicy::LeastLoaded => {
            let mut best = 0;
            for (i, load) in loads.iter().enumerate() {
                if *load < loads[best] {
                    best = i;
                }
            }
            best
        }
    }
}

/// Pilot lifecycle. Terminal phases mirror the underlying job except
/// for an orderly drain, which completes the pilot even though the
/// placeholder job is torn down by cancelation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PilotPhase {
    Pending,
    Ready,
    Draining,
    Completed,
    Failed,
    Canceled,
}

impl PilotPhase {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            PilotPhase::Completed | PilotPhase::Failed | PilotPhase::Canceled
        )
    }
}

/// Pilot-level view of one task, kept current by event conversion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSnapshot {
    pub uid: String,
    pub state: TaskState,
    pub exit_code: Option<i32>,
    pub result: Option<String>,
    pub detail: BTreeMap<String, String>,
}

impl TaskSnapshot {
    pub(crate) fn new(uid: &str) -> Self {
        TaskSnapshot {
            uid: uid.to_string(),
            state: TaskState::New,
            exit_code: None,
            result: None,
            detail: BTreeMap::new(),
        }
    }
}

/// One converted state update, as delivered to watchers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskUpdate {
    pub uid: String,
    pub timestamp: Time,
    pub state: TaskState,
    pub exit_code: Option<i32>,
    pub result: Option<String>,
    pub detail: BTreeMap<String, String>,
}

/// Instance event that does not map onto a pilot task-state update.
/// Never dropped silently: drivers log these and keep them queryable.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unknown instance event for {subject}: {reason}")]
pub struct UnknownEvent {
    pub subject: String,
    pub reason: String,
}

/// Maps one instance event to a pilot task-state update.
///
/// The instance vocabulary is total: EXECUTING maps to EXECUTING,
/// an exit-0 completion to DONE, a nonzero exit to FAILED, and a
/// cancelation to CANCELED. Anything else is an [`UnknownEvent`].
pub fn convert_event(record: &EventRecord) -> Result<TaskUpdate, UnknownEvent> {
    let (StateValue::Task(_old), StateValue::Task(new)) = (record.old_state, record.new_state)
    else {
        return Err(UnknownEvent {
            subject: record.subject_id.clone(),
            reason: "not a task event".into(),
        });
    };
    let exit_code = match record.detail.get("exit_code") {
        Some(raw) => Some(raw.parse::<i32>().map_err(|_| UnknownEvent {
            subject: record.subject_id.clone(),
            reason: format!("unparseable exit code {raw:?}"),
        })?),
        None => None,
    };
    match new {
        TaskState::Done => {
            if exit_code != Some(0) {
                return Err(UnknownEvent {
                    subject: record.subject_id.clone(),
                    reason: "completion without exit code 0".into(),
                });
            }
        }
        TaskState::Failed => {
            if exit_code.is_none() && !record.detail.contains_key("error") {
                return Err(UnknownEvent {
                    subject: record.subject_id.clone(),
                    reason: "failure without exit code or error detail".into(),
                });
            }
        }
        _ => {}
    }
    Ok(TaskUpdate {
        uid: record.subject_id.clone(),
        timestamp: record.timestamp,
        state: new,
        exit_code,
        result: record.detail.get("result").cloned(),
        detail: record.detail.clone(),
    })
}

/// Converts a whole instance event stream, preserving per-task order.
/// Unmappable events are surfaced alongside the updates.
pub fn convert_events(records: &[EventRecord]) -> (Vec<TaskUpdate>, Vec<UnknownEvent>) {
    let mut updates = Vec::with_capacity(records.len());
    let mut unknown = Vec::new();
    for record in records {
        match convert_event(record) {
            Ok(update) => updates.push(update),
            Err(err) => unknown.push(err),
        }
    }
    (updates, unknown)
}

/// Applies an update to the pilot's task table. Returns true when the
/// update made the task terminal (first time only).
pub(crate) fn apply_update(tasks: &mut BTreeMap<String, TaskSnapshot>, update: &TaskUpdate) -> bool {
    let Some(entry) = tasks.get_mut(&update.uid) else {
        return false;
    };
    if entry.state.is_terminal() {
        return false;
    }
    entry.state = update.state;
    if update.exit_code.is_some() {
        entry.exit_code = update.exit_code;
    }
    if update.result.is_some() {
        entry.result = update.result.clone();
    }
    for (k, v) in &update.detail {
        entry.detail.insert(k.clone(), v.clone());
    }
    entry.state.is_terminal()
}

use crate::model::StateMachine;

/// Errors shared by both pilot drivers.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PilotError {
    #[error("pilot is not ready")]
    NotReady,
    #[error("pilot has shut down")]
    Terminal,
    #[error("task {uid} exceeds every instance's capacity")]
    Unsatisfiable { uid: String },
    #[error("task uid {uid} already used in this session")]
    DuplicateUid { uid: String },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("submission failed: {0}")]
    Submission(String),
    #[error("bootstrap failed: {0}")]
    Bootstrap(String),
    #[error("unknown task {0}")]
    NotFound(String),
}
