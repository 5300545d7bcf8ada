//! The simulated world: cluster nodes, batch queue, jobs, and pilots.
//!
//! One `SimWorld` owns everything that changes during a simulated run.
//! Submissions mutate state at the current tick; time passes only
//! through [`SimWorld::step`], which fires the next batch of scheduled
//! events. Queued jobs start from a batch-pump event, so a handle
//! observed right after submission is still QUEUED.
//!
//! Simulated payloads are interpreted, not executed: an executable
//! whose basename is `sleep` runs for its first argument in ticks, one
//! named `exit` terminates with its first argument as exit code, and
//! anything else runs for one tick and exits 0. Function payloads call
//! the registered function at the completion instant. Task run length
//! comes from `expected_duration_s` when set.

use crate::functions::FunctionRegistry;
use crate::model::{
    EventRecord, JobState, TaskDescription, TaskPayload, Time, ValidatedJobSpec, ValidationError,
};
use crate::pilot::{
    apply_update, convert_event, partition_nodes, Allocation, AllocationNode, BalancingPolicy,
    PilotDescription, PilotError, PilotPhase, TaskSnapshot, TaskUpdate, UnknownEvent,
};
use crate::scheduler::{InstanceAction, InstanceCore, NodeInventory, SubmitOutcome};
use crate::simcluster::engine::{EmptySchedule, EventQueue, ScheduledEvent, SimClock};
use crate::simcluster::ClusterConfig;
use crate::lrm::{CancelOutcome, JobHandle, LrmError, EXIT_CODE_NONE};
use crate::model::JobSpec;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

/// Duration and exit code of an interpreted executable payload.
fn interpret_executable(executable: &str, arguments: &[String]) -> (Time, i32) {
    let base = executable.rsplit('/').next().unwrap_or(executable);
    match base {
        "sleep" => {
            let ticks = arguments.first().and_then(|a| a.parse().ok()).unwrap_or(1);
            (ticks, 0)
        }
        "exit" => {
            let code = arguments.first().and_then(|a| a.parse().ok()).unwrap_or(0);
            (1, code)
        }
        _ => (1, 0),
    }
}

fn task_duration(task: &TaskDescription) -> Time {
    if let Some(d) = task.expected_duration_s {
        return d;
    }
    match &task.payload {
        TaskPayload::Executable {
            executable,
            arguments,
        } => interpret_executable(executable, arguments).0,
        TaskPayload::Function { .. } => 1,
    }
}

#[derive(Clone, Debug)]
enum SimJobKind {
    Plain { duration: Time, exit_code: i32 },
    PilotHost { pilot_id: String },
}

#[derive(Clone, Debug)]
struct SimJob {
    id: String,
    spec: ValidatedJobSpec,
    state: JobState,
    exit_code: Option<i32>,
    nodes: Vec<u32>,
    submit_time: Time,
    start_time: Option<Time>,
    end_time: Option<Time>,
    kind: SimJobKind,
}

impl SimJob {
    fn requested_nodes(&self) -> u32 {
        self.spec.node_count().max(1)
    }

    fn snapshot(&self) -> JobHandle {
        JobHandle {
            job_id: self.id.clone(),
            spec: self.spec.clone(),
            state: self.state,
            exit_code: self.exit_code,
            native_id: None,
            submit_time: Some(self.submit_time),
            start_time: self.start_time,
            end_time: self.end_time,
        }
    }
}

#[derive(Debug)]
struct SimPilot {
    id: String,
    job_id: String,
    desc: PilotDescription,
    policy: BalancingPolicy,
    phase: PilotPhase,
    instances: Vec<InstanceCore>,
    rr_cursor: usize,
    tasks: BTreeMap<String, TaskSnapshot>,
    unknown_events: Vec<UnknownEvent>,
}

impl SimPilot {
    fn all_idle(&self) -> bool {
        self.instances.iter().all(InstanceCore::is_idle)
    }
}

#[derive(Clone, Debug)]
enum SimEvent {
    BatchPump,
    JobFinish { job_id: String },
    JobWalltime { job_id: String },
    TaskFinish { pilot_id: String, instance: usize, task: TaskDescription },
    DrainDeadline { pilot_id: String },
}

/// The single-threaded simulation state. External code interacts by
/// submitting work before or between steps and reading snapshots,
/// notifications, and the event log afterwards.
pub struct SimWorld {
    clock: SimClock,
    queue: EventQueue<SimEvent>,
    config: ClusterConfig,
    node_owner: Vec<Option<String>>,
    free_nodes: u32,
    fifo: VecDeque<String>,
    jobs: BTreeMap<String, SimJob>,
    pilots: BTreeMap<String, SimPilot>,
    log: Vec<EventRecord>,
    notifications: VecDeque<(String, TaskUpdate)>,
    functions: Arc<FunctionRegistry>,
    job_seq: u64,
    pilot_seq: u64,
    seed: u64,
}

impl SimWorld {
    pub fn new(config: ClusterConfig, functions: FunctionRegistry, seed: u64) -> Result<Self, ValidationError> {
        config.validate()?;
        Ok(SimWorld {
            clock: SimClock::new(),
            queue: EventQueue::new(),
            node_owner: vec![None; config.node_count as usize],
            free_nodes: config.node_count,
            config,
            fifo: VecDeque::new(),
            jobs: BTreeMap::new(),
            pilots: BTreeMap::new(),
            log: Vec::new(),
            notifications: VecDeque::new(),
            functions: Arc::new(functions),
            job_seq: 0,
            pilot_seq: 0,
            seed,
        })
    }

    pub fn now(&self) -> Time {
        self.clock.now()
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn emit(&mut self, record: EventRecord) {
        self.log.push(record);
    }

    // ------------------------------------------------------------------
    // Batch jobs
    // ------------------------------------------------------------------

    /// Queues a job. The handle is QUEUED; the job starts when a pump
    /// event finds enough free nodes, in strict submission order.
    pub fn submit_job(&mut self, spec: ValidatedJobSpec) -> Result<JobHandle, LrmError> {
        self.submit_job_inner(spec, None)
    }

    fn submit_job_inner(
        &mut self,
        spec: ValidatedJobSpec,
        pilot_id: Option<String>,
    ) -> Result<JobHandle, LrmError> {
        let requested = spec.node_count().max(1);
        if requested > self.config.node_count {
            return Err(LrmError::Validation(ValidationError::single(
                "resources.node_count",
                format!(
                    "exceeds cluster size ({} > {})",
                    requested, self.config.node_count
                ),
            )));
        }
        self.job_seq += 1;
        let id = format!("job-{:06}", self.job_seq);
        let kind = match pilot_id {
            Some(pilot_id) => SimJobKind::PilotHost { pilot_id },
            None => {
                let (duration, exit_code) =
                    interpret_executable(&spec.executable, &spec.arguments);
                SimJobKind::Plain {
                    duration,
                    exit_code,
                }
            }
        };
        let job = SimJob {
            id: id.clone(),
            spec,
            state: JobState::Queued,
            exit_code: None,
            nodes: Vec::new(),
            submit_time: self.now(),
            start_time: None,
            end_time: None,
            kind,
        };
        self.emit(EventRecord::job(self.now(), &id, JobState::New, JobState::Queued));
        self.fifo.push_back(id.clone());
        let snapshot = job.snapshot();
        self.jobs.insert(id.clone(), job);
        self.queue.schedule(self.now(), "batch", SimEvent::BatchPump);
        Ok(snapshot)
    }

    pub fn job_snapshot(&self, job_id: &str) -> Result<JobHandle, LrmError> {
        self.jobs
            .get(job_id)
            .map(SimJob::snapshot)
            .ok_or_else(|| LrmError::NotFound(job_id.to_string()))
    }

    pub fn cancel_job(&mut self, job_id: &str) -> Result<CancelOutcome, LrmError> {
        let Some(job) = self.jobs.get(job_id) else {
            return Err(LrmError::NotFound(job_id.to_string()));
        };
        match job.state {
            JobState::Completed | JobState::Failed | JobState::Canceled => {
                Ok(CancelOutcome::AlreadyTerminal)
            }
            JobState::Queued => {
                self.fifo.retain(|id| id != job_id);
                let now = self.now();
                let job = self.jobs.get_mut(job_id).expect("checked above");
                job.state = JobState::Canceled;
                job.end_time = Some(now);
                let kind = job.kind.clone();
                self.emit(EventRecord::job(
                    now,
                    job_id,
                    JobState::Queued,
                    JobState::Canceled,
                ));
                if let SimJobKind::PilotHost { pilot_id } = kind {
                    if let Some(pilot) = self.pilots.get_mut(&pilot_id) {
                        pilot.phase = PilotPhase::Canceled;
                    }
                }
                Ok(CancelOutcome::Canceled)
            }
            JobState::Active => {
                self.terminate_active_job(job_id, JobState::Canceled, None, &[]);
                Ok(CancelOutcome::Canceled)
            }
            JobState::New => unreachable!("jobs enter the world queued"),
        }
    }

    /// Ends an ACTIVE job: cancels pilot work if it hosts a pilot,
    /// emits the terminal event, frees nodes, and pumps the queue.
    fn terminate_active_job(
        &mut self,
        job_id: &str,
        state: JobState,
        exit_code: Option<i32>,
        detail: &[(&str, &str)],
    ) {
        let now = self.now();
        let Some(job) = self.jobs.get(job_id) else {
            return;
        };
        if job.state != JobState::Active {
            return;
        }
        if let SimJobKind::PilotHost { pilot_id } = job.kind.clone() {
            self.cancel_pilot_work(&pilot_id);
            if let Some(pilot) = self.pilots.get_mut(&pilot_id) {
                pilot.phase = match state {
                    JobState::Completed => PilotPhase::Completed,
                    JobState::Failed => PilotPhase::Failed,
                    _ => PilotPhase::Canceled,
                };
            }
        }
        let job = self.jobs.get_mut(job_id).expect("checked above");
        job.state = state;
        job.exit_code = exit_code;
        job.end_time = Some(now);
        let nodes = std::mem::take(&mut job.nodes);
        let mut record = EventRecord::job(now, job_id, JobState::Active, state);
        for (k, v) in detail {
            record.detail.insert((*k).into(), (*v).into());
        }
        if let Some(code) = exit_code {
            record.detail.insert("exit_code".into(), code.to_string());
        }
        self.emit(record);
        for idx in nodes {
            self.node_owner[idx as usize] = None;
            self.free_nodes += 1;
        }
        self.queue.schedule(now, "batch", SimEvent::BatchPump);
    }

    /// Strict FIFO: start the head job while enough whole nodes are
    /// free; a blocked head blocks everything behind it.
    fn pump_batch(&mut self) {
        while let Some(head) = self.fifo.front().cloned() {
            let requested = self.jobs[&head].requested_nodes();
            if requested > self.free_nodes {
                break;
            }
            self.fifo.pop_front();
            self.start_job(&head, requested);
        }
    }

    fn start_job(&mut self, job_id: &str, requested: u32) {
        let now = self.now();
        let mut taken = Vec::with_capacity(requested as usize);
        for (idx, owner) in self.node_owner.iter_mut().enumerate() {
            if taken.len() == requested as usize {
                break;
            }
            if owner.is_none() {
                *owner = Some(job_id.to_string());
                taken.push(idx as u32);
            }
        }
        debug_assert_eq!(taken.len(), requested as usize);
        self.free_nodes -= requested;

        let node_names: Vec<String> = taken.iter().map(|i| self.config.node_id(*i)).collect();
        let job = self.jobs.get_mut(job_id).expect("job exists");
        job.state = JobState::Active;
        job.start_time = Some(now);
        job.nodes = taken;
        let walltime = job.spec.walltime_s();
        let kind = job.kind.clone();
        self.emit(
            EventRecord::job(now, job_id, JobState::Queued, JobState::Active)
                .with_detail("nodes", node_names.join(",")),
        );
        self.queue.schedule(
            now + walltime,
            job_id,
            SimEvent::JobWalltime {
                job_id: job_id.to_string(),
            },
        );
        match kind {
            SimJobKind::Plain { duration, .. } => {
                self.queue.schedule(
                    now + duration,
                    job_id,
                    SimEvent::JobFinish {
                        job_id: job_id.to_string(),
                    },
                );
            }
            SimJobKind::PilotHost { pilot_id } => self.bootstrap_pilot(&pilot_id, &node_names),
        }
    }

    // ------------------------------------------------------------------
    // Pilots
    // ------------------------------------------------------------------

    /// Submits the placeholder job for a pilot and registers the agent
    /// that will bootstrap once the job turns ACTIVE.
    pub fn submit_pilot(&mut self, desc: PilotDescription) -> Result<String, PilotError> {
        self.submit_pilot_with_policy(desc, BalancingPolicy::RoundRobin)
    }

    pub fn submit_pilot_with_policy(
        &mut self,
        desc: PilotDescription,
        policy: BalancingPolicy,
    ) -> Result<String, PilotError> {
        desc.validate()
            .map_err(|e| PilotError::Submission(e.to_string()))?;
        self.pilot_seq += 1;
        let pilot_id = format!("pilot-{:04}", self.pilot_seq);

        let mut spec = JobSpec::new("pilot-agent");
        spec.resources.node_count = desc.resources.node_count;
        spec.walltime_s = desc.walltime_s as i64;
        let validated = crate::model::validate_job_spec(&spec)
            .expect("derived pilot job spec is always valid");
        let handle = self
            .submit_job_inner(validated, Some(pilot_id.clone()))
            .map_err(|e| PilotError::Submission(e.to_string()))?;

        self.pilots.insert(
            pilot_id.clone(),
            SimPilot {
                id: pilot_id.clone(),
                job_id: handle.job_id,
                desc,
                policy,
                phase: PilotPhase::Pending,
                instances: Vec::new(),
                rr_cursor: 0,
                tasks: BTreeMap::new(),
                unknown_events: Vec::new(),
            },
        );
        Ok(pilot_id)
    }

    fn bootstrap_pilot(&mut self, pilot_id: &str, node_names: &[String]) {
        let pilot = self.pilots.get_mut(pilot_id).expect("pilot registered");
        let allocation = Allocation {
            nodes: node_names
                .iter()
                .map(|id| AllocationNode {
                    node_id: id.clone(),
                    cores: self.config.cores_per_node,
                    gpus: self.config.gpus_per_node,
                })
                .collect(),
            source_job_id: pilot.job_id.clone(),
        };
        let subsets = partition_nodes(&allocation, pilot.desc.instance_count)
            .expect("instance_count <= node_count validated at submit");
        pilot.instances = subsets
            .into_iter()
            .enumerate()
            .map(|(i, subset)| {
                InstanceCore::new(
                    format!("{pilot_id}/i{i}"),
                    NodeInventory::new(subset.into_iter().map(|n| (n.node_id, n.cores, n.gpus))),
                )
            })
            .collect();
        pilot.phase = PilotPhase::Ready;
    }

    pub fn pilot_phase(&self, pilot_id: &str) -> Option<PilotPhase> {
        self.pilots.get(pilot_id).map(|p| p.phase)
    }

    pub fn pilot_job_id(&self, pilot_id: &str) -> Option<String> {
        self.pilots.get(pilot_id).map(|p| p.job_id.clone())
    }

    pub fn pilot_allocation_nodes(&self, pilot_id: &str) -> Option<Vec<String>> {
        let pilot = self.pilots.get(pilot_id)?;
        let job = self.jobs.get(&pilot.job_id)?;
        Some(job.nodes.iter().map(|i| self.config.node_id(*i)).collect())
    }

    pub fn instance_loads(&self, pilot_id: &str) -> Option<Vec<usize>> {
        self.pilots
            .get(pilot_id)
            .map(|p| p.instances.iter().map(InstanceCore::load).collect())
    }

    pub fn task_snapshot(&self, pilot_id: &str, uid: &str) -> Option<TaskSnapshot> {
        self.pilots.get(pilot_id)?.tasks.get(uid).cloned()
    }

    pub fn task_snapshots(&self, pilot_id: &str) -> Vec<TaskSnapshot> {
        self.pilots
            .get(pilot_id)
            .map(|p| p.tasks.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn unknown_events(&self, pilot_id: &str) -> Vec<UnknownEvent> {
        self.pilots
            .get(pilot_id)
            .map(|p| p.unknown_events.clone())
            .unwrap_or_default()
    }

    /// Routes tasks to instances under the pilot's balancing policy.
    /// The whole batch is validated before anything is enqueued.
    pub fn submit_tasks(
        &mut self,
        pilot_id: &str,
        tasks: Vec<TaskDescription>,
    ) -> Result<(), PilotError> {
        let now = self.now();
        let pilot = self
            .pilots
            .get_mut(pilot_id)
            .ok_or_else(|| PilotError::NotFound(pilot_id.to_string()))?;
        match pilot.phase {
            PilotPhase::Pending => return Err(PilotError::NotReady),
            PilotPhase::Ready => {}
            _ => return Err(PilotError::Terminal),
        }
        let mut seen = std::collections::BTreeSet::new();
        for task in &tasks {
            task.validate()
                .map_err(|e| PilotError::InvalidTask(e.to_string()))?;
            if pilot.tasks.contains_key(&task.uid) || !seen.insert(task.uid.clone()) {
                return Err(PilotError::DuplicateUid {
                    uid: task.uid.clone(),
                });
            }
            let fits_somewhere = pilot
                .instances
                .iter()
                .any(|i| i.inventory().capacity_total(task) >= task.ranks as u64);
            if !fits_somewhere {
                return Err(PilotError::Unsatisfiable {
                    uid: task.uid.clone(),
                });
            }
        }

        let SimWorld {
            pilots,
            log,
            notifications,
            queue,
            ..
        } = self;
        let pilot = pilots.get_mut(pilot_id).expect("checked above");
        for task in tasks {
            pilot.tasks.insert(task.uid.clone(), TaskSnapshot::new(&task.uid));
            let loads: Vec<usize> = pilot.instances.iter().map(InstanceCore::load).collect();
            let mut idx = crate::pilot::choose_instance(pilot.policy, &loads, &mut pilot.rr_cursor);
            // The policy's pick may be a subset this task cannot ever
            // fit; fall back to the first instance that can host it.
            if pilot.instances[idx].inventory().capacity_total(&task) < task.ranks as u64 {
                idx = pilot
                    .instances
                    .iter()
                    .position(|i| i.inventory().capacity_total(&task) >= task.ranks as u64)
                    .expect("batch-level satisfiability checked above");
            }
            let mut actions = Vec::new();
            let outcome = pilot.instances[idx].submit(task, now, &mut actions);
            debug_assert_eq!(outcome, SubmitOutcome::Queued);
            Self::apply_instance_actions(pilot, idx, actions, now, log, notifications, queue);
        }
        Ok(())
    }

    /// Cancels one pilot task. Returns false when the task is already
    /// terminal (or unknown to this pilot).
    pub fn cancel_task(&mut self, pilot_id: &str, uid: &str) -> Result<bool, PilotError> {
        let now = self.now();
        let SimWorld {
            pilots,
            log,
            notifications,
            queue,
            ..
        } = self;
        let pilot = pilots
            .get_mut(pilot_id)
            .ok_or_else(|| PilotError::NotFound(pilot_id.to_string()))?;
        if !pilot.tasks.contains_key(uid) {
            return Err(PilotError::NotFound(uid.to_string()));
        }
        for idx in 0..pilot.instances.len() {
            let mut actions = Vec::new();
            if pilot.instances[idx].cancel(uid, now, &mut actions) {
                Self::apply_instance_actions(pilot, idx, actions, now, log, notifications, queue);
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Graceful shutdown: drain queued and running tasks, then complete
    /// the pilot. With a deadline, whatever is still in flight at
    /// `now + deadline` is canceled.
    pub fn shutdown_pilot(
        &mut self,
        pilot_id: &str,
        drain_deadline: Option<Time>,
    ) -> Result<(), PilotError> {
        let (phase, job_id, idle) = {
            let pilot = self
                .pilots
                .get(pilot_id)
                .ok_or_else(|| PilotError::NotFound(pilot_id.to_string()))?;
            (pilot.phase, pilot.job_id.clone(), pilot.all_idle())
        };
        match phase {
            PilotPhase::Pending => {
                // Never bootstrapped: cancel the placeholder job.
                let _ = self.cancel_job(&job_id);
                return Ok(());
            }
            PilotPhase::Ready => {}
            _ => return Ok(()),
        }
        if idle {
            self.complete_pilot(pilot_id);
            return Ok(());
        }
        self.pilots.get_mut(pilot_id).expect("checked above").phase = PilotPhase::Draining;
        if let Some(deadline) = drain_deadline {
            self.queue.schedule(
                self.now() + deadline,
                pilot_id,
                SimEvent::DrainDeadline {
                    pilot_id: pilot_id.to_string(),
                },
            );
        }
        Ok(())
    }

    /// Cancels every queued or executing task of a pilot.
    fn cancel_pilot_work(&mut self, pilot_id: &str) {
        let now = self.now();
        let SimWorld {
            pilots,
            log,
            notifications,
            queue,
            ..
        } = self;
        let Some(pilot) = pilots.get_mut(pilot_id) else {
            return;
        };
        for idx in 0..pilot.instances.len() {
            let mut actions = Vec::new();
            pilot.instances[idx].cancel_all(now, &mut actions);
            Self::apply_instance_actions(pilot, idx, actions, now, log, notifications, queue);
        }
    }

    /// Orderly completion: the agent exits 0 and the placeholder job
    /// completes.
    fn complete_pilot(&mut self, pilot_id: &str) {
        let Some(pilot) = self.pilots.get_mut(pilot_id) else {
            return;
        };
        pilot.phase = PilotPhase::Completed;
        let job_id = pilot.job_id.clone();
        self.terminate_active_job(&job_id, JobState::Completed, Some(0), &[("reason", "drained")]);
    }

    fn apply_instance_actions(
        pilot: &mut SimPilot,
        instance: usize,
        actions: Vec<InstanceAction>,
        now: Time,
        log: &mut Vec<EventRecord>,
        notifications: &mut VecDeque<(String, TaskUpdate)>,
        queue: &mut EventQueue<SimEvent>,
    ) {
        for action in actions {
            match action {
                InstanceAction::Emit(record) => {
                    log.push(record.clone());
                    match convert_event(&record) {
                        Ok(update) => {
                            if apply_update(&mut pilot.tasks, &update) {
                                notifications.push_back((pilot.id.clone(), update));
                            }
                        }
                        Err(unknown) => pilot.unknown_events.push(unknown),
                    }
                }
                InstanceAction::Launch { task, .. } => {
                    let duration = task_duration(&task);
                    queue.schedule(
                        now + duration,
                        task.uid.clone(),
                        SimEvent::TaskFinish {
                            pilot_id: pilot.id.clone(),
                            instance,
                            task,
                        },
                    );
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Stepping
    // ------------------------------------------------------------------

    /// Tick of the next scheduled event, if any.
    pub fn next_event_tick(&self) -> Option<Time> {
        self.queue.next_tick()
    }

    /// Fires the next batch of events. `Err(EmptySchedule)` means the
    /// world is quiescent.
    pub fn step(&mut self) -> Result<(), EmptySchedule> {
        let fired = self.queue.advance(&mut self.clock)?;
        for event in fired {
            self.handle_event(event);
        }
        Ok(())
    }

    /// Steps until nothing is scheduled.
    pub fn run_to_quiescence(&mut self) {
        while self.step().is_ok() {}
    }

    /// Steps until `pred` holds. Fails if the schedule drains first.
    pub fn run_until<F: Fn(&SimWorld) -> bool>(&mut self, pred: F) -> Result<(), EmptySchedule> {
        while !pred(self) {
            self.step()?;
        }
        Ok(())
    }

    /// Next pilot task notification, if one is pending.
    pub fn pop_task_notification(&mut self, pilot_id: &str) -> Option<TaskUpdate> {
        let idx = self
            .notifications
            .iter()
            .position(|(pid, _)| pid == pilot_id)?;
        self.notifications.remove(idx).map(|(_, update)| update)
    }

    fn handle_event(&mut self, event: ScheduledEvent<SimEvent>) {
        match event.payload {
            SimEvent::BatchPump => self.pump_batch(),
            SimEvent::JobFinish { job_id } => {
                let Some(job) = self.jobs.get(&job_id) else {
                    return;
                };
                if job.state != JobState::Active {
                    return;
                }
                let SimJobKind::Plain { exit_code, .. } = job.kind else {
                    return;
                };
                let state = if exit_code == 0 {
                    JobState::Completed
                } else {
                    JobState::Failed
                };
                self.terminate_active_job(&job_id, state, Some(exit_code), &[]);
            }
            SimEvent::JobWalltime { job_id } => {
                let Some(job) = self.jobs.get(&job_id) else {
                    return;
                };
                if job.state != JobState::Active {
                    return;
                }
                self.terminate_active_job(
                    &job_id,
                    JobState::Failed,
                    Some(EXIT_CODE_NONE),
                    &[("reason", "walltime")],
                );
            }
            SimEvent::TaskFinish {
                pilot_id,
                instance,
                task,
            } => {
                let now = self.now();
                let finish = match &task.payload {
                    TaskPayload::Executable {
                        executable,
                        arguments,
                    } => crate::scheduler::TaskFinish::exit(
                        interpret_executable(executable, arguments).1,
                    ),
                    TaskPayload::Function {
                        function,
                        arguments,
                    } => match self.functions.call(function, arguments) {
                        Ok(value) => crate::scheduler::TaskFinish {
                            exit_code: 0,
                            result: Some(value),
                            error: None,
                        },
                        Err(err) => crate::scheduler::TaskFinish {
                            exit_code: 1,
                            result: None,
                            error: Some(err),
                        },
                    },
                };
                let drain_done = {
                    let SimWorld {
                        pilots,
                        log,
                        notifications,
                        queue,
                        ..
                    } = self;
                    let Some(pilot) = pilots.get_mut(&pilot_id) else {
                        return;
                    };
                    let mut actions = Vec::new();
                    pilot.instances[instance].finish(&task.uid, finish, now, &mut actions);
                    Self::apply_instance_actions(
                        pilot,
                        instance,
                        actions,
                        now,
                        log,
                        notifications,
                        queue,
                    );
                    pilot.phase == PilotPhase::Draining && pilot.all_idle()
                };
                if drain_done {
                    self.complete_pilot(&pilot_id);
                }
            }
            SimEvent::DrainDeadline { pilot_id } => {
                let Some(pilot) = self.pilots.get(&pilot_id) else {
                    return;
                };
                if pilot.phase != PilotPhase::Draining {
                    return;
                }
                self.cancel_pilot_work(&pilot_id);
                self.complete_pilot(&pilot_id);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_job_spec;

    fn world(nodes: u32, cores: u32, gpus: u32) -> SimWorld {
        SimWorld::new(
            ClusterConfig::new("test", nodes, cores, gpus),
            FunctionRegistry::with_builtins(),
            0,
        )
        .unwrap()
    }

    fn sleep_spec(ticks: u64, nodes: i64, walltime: i64) -> ValidatedJobSpec {
        let mut spec = JobSpec::new("sleep");
        spec.arguments = vec![ticks.to_string()];
        spec.resources.node_count = nodes;
        spec.walltime_s = walltime;
        validate_job_spec(&spec).unwrap()
    }

    #[test]
    fn submitted_job_is_queued_until_stepped() {
        let mut w = world(4, 8, 0);
        let handle = w.submit_job(sleep_spec(5, 1, 100)).unwrap();
        assert_eq!(handle.state, JobState::Queued);
        assert_eq!(
            w.job_snapshot(&handle.job_id).unwrap().state,
            JobState::Queued
        );
        w.step().unwrap();
        assert_eq!(
            w.job_snapshot(&handle.job_id).unwrap().state,
            JobState::Active
        );
        w.run_to_quiescence();
        let final_state = w.job_snapshot(&handle.job_id).unwrap();
        assert_eq!(final_state.state, JobState::Completed);
        assert_eq!(final_state.exit_code, Some(0));
        assert_eq!(final_state.end_time, Some(5));
    }

    #[test]
    fn capacity_exceeded_rejected_at_submit() {
        let mut w = world(4, 8, 0);
        let err = w.submit_job(sleep_spec(5, 8, 100)).unwrap_err();
        match err {
            LrmError::Validation(v) => assert!(v.to_string().contains("exceeds cluster size")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn fifo_never_inverts_starts() {
        let mut w = world(2, 8, 0);
        // Each job takes both nodes; the third waits for the first two.
        let a = w.submit_job(sleep_spec(3, 2, 100)).unwrap();
        let b = w.submit_job(sleep_spec(3, 2, 100)).unwrap();
        let c = w.submit_job(sleep_spec(3, 2, 100)).unwrap();
        w.run_to_quiescence();
        let sa = w.job_snapshot(&a.job_id).unwrap().start_time.unwrap();
        let sb = w.job_snapshot(&b.job_id).unwrap().start_time.unwrap();
        let sc = w.job_snapshot(&c.job_id).unwrap().start_time.unwrap();
        assert!(sa <= sb && sb <= sc);
        assert_eq!((sa, sb, sc), (0, 3, 6));
    }

    #[test]
    fn walltime_fails_overlong_job() {
        let mut w = world(1, 8, 0);
        let h = w.submit_job(sleep_spec(50, 1, 10)).unwrap();
        w.run_to_quiescence();
        let snap = w.job_snapshot(&h.job_id).unwrap();
        assert_eq!(snap.state, JobState::Failed);
        assert_eq!(snap.exit_code, Some(EXIT_CODE_NONE));
        assert_eq!(snap.end_time, Some(10));
        let walltime_event = w
            .events()
            .iter()
            .find(|e| e.subject_id == h.job_id && e.detail.get("reason").map(String::as_str) == Some("walltime"));
        assert!(walltime_event.is_some());
    }

    #[test]
    fn cancel_queued_job_never_starts() {
        let mut w = world(1, 8, 0);
        let running = w.submit_job(sleep_spec(10, 1, 100)).unwrap();
        let queued = w.submit_job(sleep_spec(10, 1, 100)).unwrap();
        w.step().unwrap();
        assert_eq!(w.job_snapshot(&queued.job_id).unwrap().state, JobState::Queued);
        assert_eq!(w.cancel_job(&queued.job_id).unwrap(), CancelOutcome::Canceled);
        w.run_to_quiescence();
        let snap = w.job_snapshot(&queued.job_id).unwrap();
        assert_eq!(snap.state, JobState::Canceled);
        assert_eq!(snap.start_time, None);
        assert_eq!(snap.exit_code, None);
        assert_eq!(
            w.cancel_job(&queued.job_id).unwrap(),
            CancelOutcome::AlreadyTerminal
        );
        assert_eq!(
            w.job_snapshot(&running.job_id).unwrap().state,
            JobState::Completed
        );
    }

    #[test]
    fn exit_payload_maps_to_failed() {
        let mut w = world(1, 8, 0);
        let mut spec = JobSpec::new("exit");
        spec.arguments = vec!["3".into()];
        spec.walltime_s = 100;
        let h = w.submit_job(validate_job_spec(&spec).unwrap()).unwrap();
        w.run_to_quiescence();
        let snap = w.job_snapshot(&h.job_id).unwrap();
        assert_eq!(snap.state, JobState::Failed);
        assert_eq!(snap.exit_code, Some(3));
    }

    #[test]
    fn pilot_bootstraps_with_disjoint_subsets() {
        let mut w = world(4, 8, 2);
        let pid = w.submit_pilot(PilotDescription::new(4, 2, 1000)).unwrap();
        assert_eq!(w.pilot_phase(&pid), Some(PilotPhase::Pending));
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        let loads = w.instance_loads(&pid).unwrap();
        assert_eq!(loads.len(), 2);
        assert_eq!(w.pilot_allocation_nodes(&pid).unwrap().len(), 4);
    }

    #[test]
    fn tasks_flow_to_done_and_notify() {
        let mut w = world(2, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(2, 1, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        let tasks = vec![
            TaskDescription::executable("t-0", "/bin/true").with_duration(3),
            TaskDescription::function("t-1", "add").with_args(&["20", "22"]),
        ];
        w.submit_tasks(&pid, tasks).unwrap();
        w.run_to_quiescence();
        let t0 = w.task_snapshot(&pid, "t-0").unwrap();
        assert_eq!(t0.state, crate::model::TaskState::Done);
        assert_eq!(t0.exit_code, Some(0));
        let t1 = w.task_snapshot(&pid, "t-1").unwrap();
        assert_eq!(t1.result.as_deref(), Some("42"));
        let mut terminal = Vec::new();
        while let Some(update) = w.pop_task_notification(&pid) {
            terminal.push(update.uid);
        }
        // Completion order: the one-tick function task beats the
        // three-tick executable.
        assert_eq!(terminal, vec!["t-1".to_string(), "t-0".to_string()]);
    }

    #[test]
    fn round_robin_alternates_instances() {
        let mut w = world(4, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(4, 2, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        let tasks: Vec<TaskDescription> = (0..4)
            .map(|i| TaskDescription::executable(format!("t-{i}"), "/bin/true"))
            .collect();
        w.submit_tasks(&pid, tasks).unwrap();
        let assigned: Vec<String> = (0..4)
            .map(|i| {
                w.task_snapshot(&pid, &format!("t-{i}"))
                    .unwrap()
                    .detail
                    .get("instance")
                    .cloned()
                    .unwrap()
            })
            .collect();
        assert_eq!(
            assigned,
            vec![
                format!("{pid}/i0"),
                format!("{pid}/i1"),
                format!("{pid}/i0"),
                format!("{pid}/i1")
            ]
        );
    }

    #[test]
    fn oversized_task_rejected_eagerly() {
        let mut w = world(4, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(4, 2, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        // Each subset has 2 nodes x 4 cores; 3 nodes' worth of ranks
        // exceeds every subset.
        let too_big = TaskDescription::executable("big", "/bin/true").with_shape(12, 1, 0);
        let err = w.submit_tasks(&pid, vec![too_big]).unwrap_err();
        assert_eq!(err, PilotError::Unsatisfiable { uid: "big".into() });
    }

    #[test]
    fn duplicate_uid_rejected() {
        let mut w = world(2, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(2, 1, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        w.submit_tasks(&pid, vec![TaskDescription::executable("t", "/bin/true")])
            .unwrap();
        let err = w
            .submit_tasks(&pid, vec![TaskDescription::executable("t", "/bin/true")])
            .unwrap_err();
        assert_eq!(err, PilotError::DuplicateUid { uid: "t".into() });
    }

    #[test]
    fn pilot_walltime_cancels_in_flight_tasks() {
        let mut w = world(2, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(2, 1, 10)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        w.submit_tasks(
            &pid,
            vec![TaskDescription::executable("t-long", "/bin/true").with_duration(100)],
        )
        .unwrap();
        w.run_to_quiescence();
        assert_eq!(w.pilot_phase(&pid), Some(PilotPhase::Failed));
        let job = w.job_snapshot(&w.pilot_job_id(&pid).unwrap()).unwrap();
        assert_eq!(job.state, JobState::Failed);
        let t = w.task_snapshot(&pid, "t-long").unwrap();
        assert_eq!(t.state, crate::model::TaskState::Canceled);
    }

    #[test]
    fn graceful_shutdown_completes_job() {
        let mut w = world(2, 4, 0);
        let pid = w.submit_pilot(PilotDescription::new(2, 1, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        w.submit_tasks(
            &pid,
            vec![TaskDescription::executable("t", "/bin/true").with_duration(5)],
        )
        .unwrap();
        w.shutdown_pilot(&pid, Some(100)).unwrap();
        assert_eq!(w.pilot_phase(&pid), Some(PilotPhase::Draining));
        w.run_to_quiescence();
        assert_eq!(w.pilot_phase(&pid), Some(PilotPhase::Completed));
        let t = w.task_snapshot(&pid, "t").unwrap();
        assert_eq!(t.state, crate::model::TaskState::Done);
        let job = w.job_snapshot(&w.pilot_job_id(&pid).unwrap()).unwrap();
        assert_eq!(job.state, JobState::Completed);
        // Nodes are free again: a full-size job can start.
        let h = w.submit_job(sleep_spec(1, 2, 50)).unwrap();
        w.run_to_quiescence();
        assert_eq!(w.job_snapshot(&h.job_id).unwrap().state, JobState::Completed);
    }

    #[test]
    fn drain_deadline_cancels_stragglers() {
        let mut w = world(1, 2, 0);
        let pid = w.submit_pilot(PilotDescription::new(1, 1, 1000)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
            .unwrap();
        w.submit_tasks(
            &pid,
            vec![TaskDescription::executable("t-slow", "/bin/true").with_duration(500)],
        )
        .unwrap();
        w.shutdown_pilot(&pid, Some(10)).unwrap();
        w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Completed))
            .unwrap();
        assert_eq!(w.now(), 10);
        let t = w.task_snapshot(&pid, "t-slow").unwrap();
        assert_eq!(t.state, crate::model::TaskState::Canceled);
    }

    #[test]
    fn identical_runs_produce_identical_logs() {
        let run = || {
            let mut w = world(4, 4, 1);
            let pid = w.submit_pilot(PilotDescription::new(4, 2, 1000)).unwrap();
            w.run_until(|w| w.pilot_phase(&pid) == Some(PilotPhase::Ready))
                .unwrap();
            let tasks: Vec<TaskDescription> = (0..20u32)
                .map(|i| {
                    TaskDescription::executable(format!("t-{i:03}"), "/bin/true")
                        .with_shape(1 + (i % 2), 1, u32::from(i % 3 == 0))
                        .with_duration(1 + (i as u64 % 5))
                })
                .collect();
            w.submit_tasks(&pid, tasks).unwrap();
            w.shutdown_pilot(&pid, Some(1000)).unwrap();
            w.run_to_quiescence();
            w.events()
                .iter()
                .map(EventRecord::log_line)
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(run(), run());
    }
}
