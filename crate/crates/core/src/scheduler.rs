//! Nested scheduler instance: first-fit placement over a node subset.
//!
//! An instance owns a disjoint subset of an allocation's nodes and a
//! FIFO task queue. Placement is first-fit with compact packing: nodes
//! are scanned in ascending `node_id` order and whole ranks are
//! assigned to a node while it still has `cores_per_rank` free cores
//! and `gpus_per_rank` free GPUs. The queue is strict FIFO — a blocked
//! head task blocks younger tasks; there is no backfill.
//!
//! [`InstanceCore`] is the driver-agnostic state machine: the simulated
//! world and the real (threaded) instance loop both feed it submissions
//! and completions and carry out the [`InstanceAction`]s it returns.

use crate::model::{EventRecord, TaskDescription, TaskState, Time};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// Free/total core and GPU counters for one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeCapacity {
    pub node_id: String,
    pub free_cores: u32,
    pub total_cores: u32,
    pub free_gpus: u32,
    pub total_gpus: u32,
}

/// The scheduler's ledger: per-node free/total counters for the node
/// subset owned by one instance. Totals never change for the lifetime
/// of the instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeInventory {
    nodes: Vec<NodeCapacity>,
}

impl NodeInventory {
    /// Builds an inventory from `(node_id, cores, gpus)` triples,
    /// sorted by ascending node id.
    pub fn new(nodes: impl IntoIterator<Item = (String, u32, u32)>) -> Self {
        let mut nodes: Vec<NodeCapacity> = nodes
            .into_iter()
            .map(|(node_id, cores, gpus)| NodeCapacity {
                node_id,
                free_cores: cores,
                total_cores: cores,
                free_gpus: gpus,
                total_gpus: gpus,
            })
            .collect();
        nodes.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        NodeInventory { nodes }
    }

    /// Uniform inventory: `node_count` nodes named `n0000..`, each with
    /// the same core and GPU counts.
    pub fn uniform(node_count: u32, cores_per_node: u32, gpus_per_node: u32) -> Self {
        NodeInventory::new(
            (0..node_count).map(|i| (format!("n{i:04}"), cores_per_node, gpus_per_node)),
        )
    }

    pub fn nodes(&self) -> &[NodeCapacity] {
        &self.nodes
    }

    pub fn total_cores(&self) -> u64 {
        self.nodes.iter().map(|n| n.total_cores as u64).sum()
    }

    pub fn total_gpus(&self) -> u64 {
        self.nodes.iter().map(|n| n.total_gpus as u64).sum()
    }

    pub fn free_cores(&self) -> u64 {
        self.nodes.iter().map(|n| n.free_cores as u64).sum()
    }

    pub fn free_gpus(&self) -> u64 {
        self.nodes.iter().map(|n| n.free_gpus as u64).sum()
    }

    /// Ranks of shape `(cores_per_rank, gpus_per_rank)` a node can host
    /// given `cores`/`gpus` available counters.
    fn ranks_fitting(cores: u32, gpus: u32, cores_per_rank: u32, gpus_per_rank: u32) -> u64 {
        let by_cores = (cores / cores_per_rank) as u64;
        if gpus_per_rank == 0 {
            by_cores
        } else {
            by_cores.min((gpus / gpus_per_rank) as u64)
        }
    }

    /// Ranks the whole (empty) subset could host; used for eager
    /// satisfiability checks at submission time.
    pub fn capacity_total(&self, task: &TaskDescription) -> u64 {
        self.nodes
            .iter()
            .map(|n| {
                Self::ranks_fitting(
                    n.total_cores,
                    n.total_gpus,
                    task.cores_per_rank,
                    task.gpus_per_rank,
                )
            })
            .sum()
    }
}

/// Per-node share of a placement. A rank's cores and GPUs come from a
/// single node; `cores`/`gpus` aggregate all ranks put on `node_id`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub node_id: String,
    pub cores: u32,
    pub gpus: u32,
}

/// Concrete resources held by one task across the subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub task_uid: String,
    pub assignments: Vec<Assignment>,
    pub start_tick: Option<Time>,
    pub end_tick: Option<Time>,
}

impl Placement {
    /// Wire form used in event details: `node:cores:gpus` joined by
    /// commas, in node order.
    pub fn detail_string(&self) -> String {
        self.assignments
            .iter()
            .map(|a| format!("{}:{}:{}", a.node_id, a.cores, a.gpus))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parses the [`Placement::detail_string`] wire form.
    pub fn parse_detail(task_uid: &str, s: &str) -> Result<Placement, String> {
        let mut assignments = Vec::new();
        for part in s.split(',') {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(format!("bad assignment token {part:?}"));
            }
            assignments.push(Assignment {
                node_id: fields[0].to_string(),
                cores: fields[1].parse().map_err(|e| format!("bad cores: {e}"))?,
                gpus: fields[2].parse().map_err(|e| format!("bad gpus: {e}"))?,
            });
        }
        Ok(Placement {
            task_uid: task_uid.to_string(),
            assignments,
            start_tick: None,
            end_tick: None,
        })
    }
}

/// Outcome of a placement attempt. `Busy` and `Unsatisfiable` are
/// values, not faults: the first means "fits the subset but not the
/// current free counters", the second "does not fit even an empty
/// subset".
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlaceOutcome {
    Placed(Placement),
    Busy,
    Unsatisfiable,
}

/// First-fit placement. On success the inventory's free counters are
/// decremented before returning, so bookkeeping stays consistent as
/// long as one owner drives the instance.
pub fn try_place(task: &TaskDescription, inventory: &mut NodeInventory) -> PlaceOutcome {
    let mut remaining = task.ranks as u64;
    let mut picks: Vec<(usize, u64)> = Vec::new();
    for (idx, node) in inventory.nodes.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let fit = NodeInventory::ranks_fitting(
            node.free_cores,
            node.free_gpus,
            task.cores_per_rank,
            task.gpus_per_rank,
        );
        let take = fit.min(remaining);
        if take > 0 {
            picks.push((idx, take));
            remaining -= take;
        }
    }

    if remaining > 0 {
        return if inventory.capacity_total(task) >= task.ranks as u64 {
            PlaceOutcome::Busy
        } else {
            PlaceOutcome::Unsatisfiable
        };
    }

    let assignments: Vec<Assignment> = picks
        .into_iter()
        .map(|(idx, ranks)| {
            let node = &mut inventory.nodes[idx];
            let cores = (ranks as u32) * task.cores_per_rank;
            let gpus = (ranks as u32) * task.gpus_per_rank;
            node.free_cores -= cores;
            node.free_gpus -= gpus;
            Assignment {
                node_id: node.node_id.clone(),
                cores,
                gpus,
            }
        })
        .collect();
    PlaceOutcome::Placed(Placement {
        task_uid: task.uid.clone(),
        assignments,
        start_tick: None,
        end_tick: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReleaseError {
    /// Restoring the counters would exceed node totals: the placement
    /// is not currently held.
    #[error("placement for task {0} already released")]
    DoubleRelease(String),
    #[error("assignment names unknown node {0}")]
    UnknownNode(String),
}

/// Restores the counters a placement held.
pub fn release(placement: &Placement, inventory: &mut NodeInventory) -> Result<(), ReleaseError> {
    // Validate fully before mutating so a bad release leaves the
    // inventory untouched.
    for a in &placement.assignments {
        let node = inventory
            .nodes
            .iter()
            .find(|n| n.node_id == a.node_id)
            .ok_or_else(|| ReleaseError::UnknownNode(a.node_id.clone()))?;
        if node.free_cores + a.cores > node.total_cores || node.free_gpus + a.gpus > node.total_gpus
        {
            return Err(ReleaseError::DoubleRelease(placement.task_uid.clone()));
        }
    }
    for a in &placement.assignments {
        let node = inventory
            .nodes
            .iter_mut()
            .find(|n| n.node_id == a.node_id)
            .expect("validated above");
        node.free_cores += a.cores;
        node.free_gpus += a.gpus;
    }
    Ok(())
}

/// What the driver must do after feeding the instance an input.
#[derive(Clone, Debug)]
pub enum InstanceAction {
    /// Append to the instance event channel.
    Emit(EventRecord),
    /// Start the task's payload on the placed resources.
    Launch {
        task: TaskDescription,
        placement: Placement,
    },
}

/// How a task finished, as reported by the launcher.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskFinish {
    pub exit_code: i32,
    /// In-memory result value for function payloads.
    pub result: Option<String>,
    /// Failure description when the payload could not run at all.
    pub error: Option<String>,
}

impl TaskFinish {
    pub fn exit(exit_code: i32) -> Self {
        TaskFinish {
            exit_code,
            result: None,
            error: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubmitOutcome {
    Queued,
    /// Task exceeds the whole subset even when empty; never enqueued.
    Unsatisfiable,
}

/// One nested scheduler instance: inventory, FIFO queue, and the held
/// placements of currently executing tasks.
#[derive(Debug)]
pub struct InstanceCore {
    id: String,
    inventory: NodeInventory,
    queue: VecDeque<TaskDescription>,
    executing: BTreeMap<String, (TaskDescription, Placement)>,
}

impl InstanceCore {
    pub fn new(id: impl Into<String>, inventory: NodeInventory) -> Self {
        InstanceCore {
            id: id.into(),
            inventory,
            queue: VecDeque::new(),
            executing: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn inventory(&self) -> &NodeInventory {
        &self.inventory
    }

    /// Queued plus executing tasks; the load metric used by the
    /// least-loaded balancing policy.
    pub fn load(&self) -> usize {
        self.queue.len() + self.executing.len()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.executing.is_empty()
    }

    /// Enqueues a task, or rejects it eagerly when it could never fit
    /// this subset. Placement is attempted immediately so a fitting
    /// head task never waits for the clock.
    pub fn submit(
        &mut self,
        task: TaskDescription,
        now: Time,
        actions: &mut Vec<InstanceAction>,
    ) -> SubmitOutcome {
        if self.inventory.capacity_total(&task) < task.ranks as u64 {
            return SubmitOutcome::Unsatisfiable;
        }
        actions.push(InstanceAction::Emit(
            EventRecord::task(now, &task.uid, TaskState::New, TaskState::Scheduling)
                .with_detail("instance", &self.id),
        ));
        self.queue.push_back(task);
        self.pump(now, actions);
        SubmitOutcome::Queued
    }

    /// Handles a completion report from the launcher. Unknown uids are
    /// ignored: they are stale reports for tasks already canceled.
    pub fn finish(
        &mut self,
        uid: &str,
        finish: TaskFinish,
        now: Time,
        actions: &mut Vec<InstanceAction>,
    ) {
        let Some((_task, placement)) = self.executing.remove(uid) else {
            return;
        };
        let mut record = if let Some(err) = &finish.error {
            EventRecord::task(now, uid, TaskState::Executing, TaskState::Failed)
                .with_detail("error", err)
        } else if finish.exit_code == 0 {
            EventRecord::task(now, uid, TaskState::Executing, TaskState::Done)
        } else {
            EventRecord::task(now, uid, TaskState::Executing, TaskState::Failed)
        };
        record
            .detail
            .insert("exit_code".into(), finish.exit_code.to_string());
        record.detail.insert("instance".into(), self.id.clone());
        if let Some(result) = &finish.result {
            record.detail.insert("result".into(), result.clone());
        }
        actions.push(InstanceAction::Emit(record));
        release(&placement, &mut self.inventory).expect("held placement releases cleanly");
        self.pump(now, actions);
    }

    /// Cancels one task wherever it currently is. Returns false when
    /// the uid is unknown (already terminal or never submitted).
    pub fn cancel(&mut self, uid: &str, now: Time, actions: &mut Vec<InstanceAction>) -> bool {
        if let Some(pos) = self.queue.iter().position(|t| t.uid == uid) {
            self.queue.remove(pos);
            actions.push(InstanceAction::Emit(
                EventRecord::task(now, uid, TaskState::Scheduling, TaskState::Canceled)
                    .with_detail("instance", &self.id),
            ));
            self.pump(now, actions);
            return true;
        }
        if let Some((_task, placement)) = self.executing.remove(uid) {
            actions.push(InstanceAction::Emit(
                EventRecord::task(now, uid, TaskState::Executing, TaskState::Canceled)
                    .with_detail("instance", &self.id),
            ));
            release(&placement, &mut self.inventory).expect("held placement releases cleanly");
            self.pump(now, actions);
            return true;
        }
        false
    }

    /// Cancels everything queued or executing; used by shutdown and
    /// walltime expiry. Returns the uids of canceled executing tasks so
    /// real drivers can kill their payloads.
    pub fn cancel_all(&mut self, now: Time, actions: &mut Vec<InstanceAction>) -> Vec<String> {
        let queued: Vec<String> = self.queue.iter().map(|t| t.uid.clone()).collect();
        self.queue.clear();
        for uid in &queued {
            actions.push(InstanceAction::Emit(
                EventRecord::task(now, uid, TaskState::Scheduling, TaskState::Canceled)
                    .with_detail("instance", &self.id),
            ));
        }
        let executing: Vec<String> = self.executing.keys().cloned().collect();
        for uid in &executing {
            let (_task, placement) = self.executing.remove(uid).expect("key just listed");
            actions.push(InstanceAction::Emit(
                EventRecord::task(now, uid, TaskState::Executing, TaskState::Canceled)
                    .with_detail("instance", &self.id),
            ));
            release(&placement, &mut self.inventory).expect("held placement releases cleanly");
        }
        executing
    }

    /// FIFO pump: place the head task while it fits. A `Busy` head
    /// blocks younger tasks by design.
    fn pump(&mut self, now: Time, actions: &mut Vec<InstanceAction>) {
        while let Some(head) = self.queue.front() {
            match try_place(head, &mut self.inventory) {
                PlaceOutcome::Placed(mut placement) => {
                    let task = self.queue.pop_front().expect("head exists");
                    placement.start_tick = Some(now);
                    actions.push(InstanceAction::Emit(
                        EventRecord::task(
                            now,
                            &task.uid,
                            TaskState::Scheduling,
                            TaskState::Executing,
                        )
                        .with_detail("assignments", placement.detail_string())
                        .with_detail("instance", &self.id),
                    ));
                    actions.push(InstanceAction::Launch {
                        task: task.clone(),
                        placement: placement.clone(),
                    });
                    self.executing.insert(task.uid.clone(), (task, placement));
                }
                PlaceOutcome::Busy => break,
                PlaceOutcome::Unsatisfiable => {
                    // submit() rejects these; reaching one here means the
                    // queue was built without the eager check.
                    let task = self.queue.pop_front().expect("head exists");
                    actions.push(InstanceAction::Emit(
                        EventRecord::task(now, &task.uid, TaskState::Scheduling, TaskState::Failed)
                            .with_detail("error", "unsatisfiable")
                            .with_detail("instance", &self.id),
                    ));
                }
            }
        }
    }
}
