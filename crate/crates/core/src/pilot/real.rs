//! Real-mode pilot over the local backend.
//!
//! The placeholder job is a long sleep whose walltime the backend
//! enforces; the agent bootstraps once the job turns ACTIVE. Each
//! nested instance runs as its own thread owning an [`InstanceCore`];
//! task payloads run as child processes or function worker threads that
//! report completions back to their instance. A single conversion loop
//! turns instance events into pilot task-state updates and is the only
//! place watcher callbacks fire.
//!
//! Cancelation kills executable payloads outright. Function payloads
//! are not preemptible: the task is marked CANCELED and the worker's
//! eventual result is discarded as stale.

use crate::functions::FunctionRegistry;
use crate::lrm::local::LocalExecutor;
use crate::lrm::{JobExecutor, MonotoneMs};
use crate::model::{
    EventRecord, JobSpec, JobState, TaskDescription, TaskPayload, TaskState, Time,
};
use crate::pilot::{
    apply_update, choose_instance, convert_event, partition_nodes, Allocation, AllocationNode,
    BalancingPolicy, PilotDescription, PilotError, PilotPhase, TaskSnapshot, TaskUpdate,
    UnknownEvent,
};
use crate::scheduler::{InstanceAction, InstanceCore, NodeInventory, SubmitOutcome, TaskFinish};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

static PILOT_SEQ: AtomicU64 = AtomicU64::new(0);

enum InstanceMsg {
    Submit(TaskDescription),
    Finished(String, TaskFinish),
    Cancel(String),
    CancelAll,
    Stop,
}

struct State {
    phase: PilotPhase,
    allocation: Option<Allocation>,
    subsets: Vec<NodeInventory>,
    instance_txs: Vec<Sender<InstanceMsg>>,
    tasks: BTreeMap<String, TaskSnapshot>,
    notifications: VecDeque<TaskUpdate>,
    unknown_events: Vec<UnknownEvent>,
    events: Vec<EventRecord>,
    loads: Vec<usize>,
    rr_cursor: usize,
    shutdown_requested: bool,
    bootstrap_error: Option<String>,
}

struct Shared {
    desc: PilotDescription,
    policy: BalancingPolicy,
    state: Mutex<State>,
    cv: Condvar,
    clock: MonotoneMs,
    watchers: Mutex<Vec<Box<dyn Fn(&TaskUpdate) + Send>>>,
}

/// A live pilot on the local backend.
pub struct RealPilot {
    pilot_id: String,
    job_id: String,
    executor: LocalExecutor,
    shared: Arc<Shared>,
}

impl RealPilot {
    /// Submits the placeholder job and starts the agent. The pilot is
    /// usable once [`RealPilot::wait_ready`] returns.
    pub fn submit(
        executor: &LocalExecutor,
        desc: PilotDescription,
        functions: Arc<FunctionRegistry>,
    ) -> Result<RealPilot, PilotError> {
        Self::submit_with_policy(executor, desc, functions, BalancingPolicy::RoundRobin)
    }

    pub fn submit_with_policy(
        executor: &LocalExecutor,
        desc: PilotDescription,
        functions: Arc<FunctionRegistry>,
        policy: BalancingPolicy,
    ) -> Result<RealPilot, PilotError> {
        desc.validate()
            .map_err(|e| PilotError::Submission(e.to_string()))?;
        let pilot_id = format!("pilot-{:04}", PILOT_SEQ.fetch_add(1, Ordering::SeqCst) + 1);

        // The sleep outlives the walltime so the backend's watchdog is
        // what ends the job on expiry, exactly like a batch system.
        let mut spec = JobSpec::new("sleep");
        spec.arguments = vec![(desc.walltime_s + 3600).to_string()];
        spec.resources.node_count = desc.resources.node_count;
        spec.walltime_s = desc.walltime_s as i64;
        let validated = crate::model::validate_job_spec(&spec)
            .map_err(|e| PilotError::Submission(e.to_string()))?;
        let handle = executor
            .submit(&validated)
            .map_err(|e| PilotError::Submission(e.to_string()))?;

        let shared = Arc::new(Shared {
            desc: desc.clone(),
            policy,
            state: Mutex::new(State {
                phase: PilotPhase::Pending,
                allocation: None,
                subsets: Vec::new(),
                instance_txs: Vec::new(),
                tasks: BTreeMap::new(),
                notifications: VecDeque::new(),
                unknown_events: Vec::new(),
                events: Vec::new(),
                loads: Vec::new(),
                rr_cursor: 0,
                shutdown_requested: false,
                bootstrap_error: None,
            }),
            cv: Condvar::new(),
            clock: MonotoneMs::new(),
            watchers: Mutex::new(Vec::new()),
        });

        let pilot = RealPilot {
            pilot_id: pilot_id.clone(),
            job_id: handle.job_id.clone(),
            executor: executor.clone(),
            shared: Arc::clone(&shared),
        };

        // Bootstrap: wait for the allocation, then start the agent.
        {
            let executor = executor.clone();
            let shared = Arc::clone(&shared);
            let job_id = handle.job_id.clone();
            let functions = Arc::clone(&functions);
            std::thread::spawn(move || {
                bootstrap(&executor, &job_id, &pilot_id, shared, functions);
            });
        }
        // Job monitor: reacts to walltime expiry or external cancel.
        {
            let executor = executor.clone();
            let shared = Arc::clone(&shared);
            let job_id = handle.job_id.clone();
            std::thread::spawn(move || {
                monitor_job(&executor, &job_id, shared);
            });
        }
        Ok(pilot)
    }

    pub fn pilot_id(&self) -> &str {
        &self.pilot_id
    }

    pub fn job_id(&self) -> &str {
        &self.job_id
    }

    pub fn executor(&self) -> &LocalExecutor {
        &self.executor
    }

    pub fn phase(&self) -> PilotPhase {
        self.shared.state.lock().unwrap().phase
    }

    pub fn allocation(&self) -> Option<Allocation> {
        self.shared.state.lock().unwrap().allocation.clone()
    }

    /// Instance event records observed so far (the pilot's channel, not
    /// the backend's job log).
    pub fn events(&self) -> Vec<EventRecord> {
        self.shared.state.lock().unwrap().events.clone()
    }

    pub fn unknown_events(&self) -> Vec<UnknownEvent> {
        self.shared.state.lock().unwrap().unknown_events.clone()
    }

    pub fn task(&self, uid: &str) -> Option<TaskSnapshot> {
        self.shared.state.lock().unwrap().tasks.get(uid).cloned()
    }

    pub fn tasks(&self) -> Vec<TaskSnapshot> {
        self.shared
            .state
            .lock()
            .unwrap()
            .tasks
            .values()
            .cloned()
            .collect()
    }

    /// Registers a completion watcher, invoked from the delivery path
    /// of terminal updates. Callbacks must not block.
    pub fn add_watcher<F: Fn(&TaskUpdate) + Send + 'static>(&self, watcher: F) {
        self.shared.watchers.lock().unwrap().push(Box::new(watcher));
    }

    pub fn wait_ready(&self, timeout_ms: u64) -> Result<(), PilotError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut state = self.shared.state.lock().unwrap();
        loop {
            match state.phase {
                PilotPhase::Ready | PilotPhase::Draining => return Ok(()),
                PilotPhase::Pending => {}
                _ => {
                    let reason = state
                        .bootstrap_error
                        .clone()
                        .unwrap_or_else(|| "pilot job ended before bootstrap".into());
                    return Err(PilotError::Bootstrap(reason));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(PilotError::Bootstrap("timed out waiting for ready".into()));
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(state, deadline - now)
                .expect("lock poisoned");
            state = guard;
        }
    }

    pub fn submit_tasks(&self, tasks: Vec<TaskDescription>) -> Result<(), PilotError> {
        let mut state = self.shared.state.lock().unwrap();
        match state.phase {
            PilotPhase::Pending => return Err(PilotError::NotReady),
            PilotPhase::Ready => {}
            _ => return Err(PilotError::Terminal),
        }
        let mut seen = std::collections::BTreeSet::new();
        for task in &tasks {
            task.validate()
                .map_err(|e| PilotError::InvalidTask(e.to_string()))?;
            if state.tasks.contains_key(&task.uid) || !seen.insert(task.uid.clone()) {
                return Err(PilotError::DuplicateUid {
                    uid: task.uid.clone(),
                });
            }
            if !state
                .subsets
                .iter()
                .any(|inv| inv.capacity_total(task) >= task.ranks as u64)
            {
                return Err(PilotError::Unsatisfiable {
                    uid: task.uid.clone(),
                });
            }
        }
        for task in tasks {
            state
                .tasks
                .insert(task.uid.clone(), TaskSnapshot::new(&task.uid));
            let loads = state.loads.clone();
            let mut idx = choose_instance(self.shared.policy, &loads, &mut state.rr_cursor);
            if state.subsets[idx].capacity_total(&task) < (task.ranks as u64) {
                idx = state
                    .subsets
                    .iter()
                    .position(|inv| inv.capacity_total(&task) >= task.ranks as u64)
                    .expect("checked above");
            }
            state.loads[idx] += 1;
            state.instance_txs[idx]
                .send(InstanceMsg::Submit(task))
                .map_err(|_| PilotError::Submission("instance loop gone".into()))?;
        }
        Ok(())
    }

    /// Best-effort cancelation; the terminal update arrives through the
    /// normal event path.
    pub fn cancel_task(&self, uid: &str) -> Result<(), PilotError> {
        let state = self.shared.state.lock().unwrap();
        if !state.tasks.contains_key(uid) {
            return Err(PilotError::NotFound(uid.to_string()));
        }
        for tx in &state.instance_txs {
            let _ = tx.send(InstanceMsg::Cancel(uid.to_string()));
        }
        Ok(())
    }

    fn pop_notification(&self, deadline: Instant) -> Result<TaskUpdate, PilotError> {
        let mut state = self.shared.state.lock().unwrap();
        loop {
            if let Some(update) = state.notifications.pop_front() {
                drop(state);
                for watcher in self.shared.watchers.lock().unwrap().iter() {
                    watcher(&update);
                }
                return Ok(update);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(PilotError::Submission(
                    "timed out waiting for a task completion".into(),
                ));
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(state, deadline - now)
                .expect("lock poisoned");
            state = guard;
        }
    }

    /// Blocks until some submitted task turns terminal.
    pub fn next_terminal(&self, timeout_ms: u64) -> Result<TaskUpdate, PilotError> {
        self.pop_notification(Instant::now() + Duration::from_millis(timeout_ms))
    }

    /// Blocks until every submitted task is terminal.
    pub fn wait_all(&self, timeout_ms: u64) -> Result<(), PilotError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut state = self.shared.state.lock().unwrap();
        loop {
            let outstanding = state.tasks.values().any(|t| {
                use crate::model::StateMachine;
                !t.state.is_terminal()
            });
            if !outstanding {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(PilotError::Submission("tasks still in flight".into()));
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(state, deadline - now)
                .expect("lock poisoned");
            state = guard;
        }
    }

    /// Graceful drain, then teardown. With a deadline, leftovers are
    /// canceled once it elapses.
    pub fn shutdown(&self, drain_deadline_ms: Option<u64>) -> PilotPhase {
        {
            let mut state = self.shared.state.lock().unwrap();
            if state.phase.is_terminal() {
                return state.phase;
            }
            state.shutdown_requested = true;
            if state.phase == PilotPhase::Ready {
                state.phase = PilotPhase::Draining;
            }
            self.shared.cv.notify_all();
        }

        let deadline = drain_deadline_ms.unwrap_or(0);
        if self.wait_all(deadline).is_err() {
            let state = self.shared.state.lock().unwrap();
            for tx in &state.instance_txs {
                let _ = tx.send(InstanceMsg::CancelAll);
            }
            drop(state);
            // Cancelation marks every remaining task terminal.
            let _ = self.wait_all(30_000);
        }

        let state = self.shared.state.lock().unwrap();
        for tx in &state.instance_txs {
            let _ = tx.send(InstanceMsg::Stop);
        }
        drop(state);
        let _ = self.executor.cancel(&self.job_id);
        let _ = self.executor.wait(&self.job_id, Some(30_000));

        let mut state = self.shared.state.lock().unwrap();
        if !state.phase.is_terminal() {
            state.phase = PilotPhase::Completed;
        }
        self.shared.cv.notify_all();
        state.phase
    }
}

impl crate::dataflow::TaskExecutor for RealPilot {
    fn submit_task(&mut self, task: TaskDescription) -> Result<(), PilotError> {
        self.submit_tasks(vec![task])
    }

    fn next_terminal(&mut self) -> Result<TaskUpdate, crate::dataflow::ExecutorUnavailable> {
        // Generous bound: a healthy pilot always delivers — walltime
        // expiry cancels whatever would otherwise hang.
        RealPilot::next_terminal(self, 600_000)
            .map_err(|e| crate::dataflow::ExecutorUnavailable(e.to_string()))
    }
}

fn bootstrap(
    executor: &LocalExecutor,
    job_id: &str,
    pilot_id: &str,
    shared: Arc<Shared>,
    functions: Arc<FunctionRegistry>,
) {
    use crate::model::StateMachine;
    let outcome = executor.wait_for(
        job_id,
        |h| h.state == JobState::Active || h.state.is_terminal(),
        120_000,
    );
    let handle = match outcome {
        Ok(h) => h,
        Err(e) => {
            let mut state = shared.state.lock().unwrap();
            state.phase = PilotPhase::Failed;
            state.bootstrap_error = Some(e.to_string());
            shared.cv.notify_all();
            return;
        }
    };
    if handle.state != JobState::Active {
        let mut state = shared.state.lock().unwrap();
        state.phase = match handle.state {
            JobState::Canceled => PilotPhase::Canceled,
            _ => PilotPhase::Failed,
        };
        state.bootstrap_error = Some(format!("pilot job ended {} before bootstrap", handle.state));
        shared.cv.notify_all();
        return;
    }

    let allocation = Allocation {
        nodes: vec![AllocationNode {
            node_id: "local".into(),
            cores: LocalExecutor::host_cores(),
            gpus: 0,
        }],
        source_job_id: job_id.to_string(),
    };
    let subsets = match partition_nodes(&allocation, shared.desc.instance_count) {
        Ok(s) => s,
        Err(e) => {
            let mut state = shared.state.lock().unwrap();
            state.phase = PilotPhase::Failed;
            state.bootstrap_error = Some(format!("instances exceed granted nodes: {e}"));
            shared.cv.notify_all();
            let _ = executor.cancel(job_id);
            return;
        }
    };

    let (conv_tx, conv_rx) = channel::<(usize, EventRecord)>();
    let mut txs = Vec::new();
    let mut inventories = Vec::new();
    for (idx, subset) in subsets.into_iter().enumerate() {
        let inventory =
            NodeInventory::new(subset.into_iter().map(|n| (n.node_id, n.cores, n.gpus)));
        inventories.push(inventory.clone());
        let core = InstanceCore::new(format!("{pilot_id}/i{idx}"), inventory);
        let (tx, rx) = channel::<InstanceMsg>();
        let worker_tx = tx.clone();
        let conv_tx = conv_tx.clone();
        let functions = Arc::clone(&functions);
        let clock = Arc::clone(&shared);
        std::thread::spawn(move || {
            instance_loop(idx, core, rx, worker_tx, conv_tx, functions, clock);
        });
        txs.push(tx);
    }
    drop(conv_tx);

    {
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            conversion_loop(conv_rx, shared);
        });
    }

    let mut state = shared.state.lock().unwrap();
    state.allocation = Some(allocation);
    state.loads = vec![0; txs.len()];
    state.subsets = inventories;
    state.instance_txs = txs;
    state.phase = PilotPhase::Ready;
    shared.cv.notify_all();
}

/// Watches the placeholder job; an externally-caused end (walltime,
/// cancel) fails the pilot and cancels all in-flight tasks.
fn monitor_job(executor: &LocalExecutor, job_id: &str, shared: Arc<Shared>) {
    let handle = match executor.wait(job_id, None) {
        Ok(h) => h,
        Err(_) => return,
    };
    let mut state = shared.state.lock().unwrap();
    if state.shutdown_requested || state.phase.is_terminal() {
        return;
    }
    state.phase = match handle.state {
        JobState::Canceled => PilotPhase::Canceled,
        _ => PilotPhase::Failed,
    };
    for tx in &state.instance_txs {
        let _ = tx.send(InstanceMsg::CancelAll);
    }
    shared.cv.notify_all();
}

fn instance_loop(
    idx: usize,
    mut core: InstanceCore,
    rx: Receiver<InstanceMsg>,
    self_tx: Sender<InstanceMsg>,
    conv_tx: Sender<(usize, EventRecord)>,
    functions: Arc<FunctionRegistry>,
    shared: Arc<Shared>,
) {
    // Pids of executing executable payloads, for cancelation.
    let mut pids: HashMap<String, u32> = HashMap::new();
    while let Ok(msg) = rx.recv() {
        let now: Time = shared.clock.now();
        let mut actions = Vec::new();
        match msg {
            InstanceMsg::Submit(task) => {
                let outcome = core.submit(task.clone(), now, &mut actions);
                if outcome == SubmitOutcome::Unsatisfiable {
                    // The pilot pre-checks capacity; surface it anyway.
                    actions.push(InstanceAction::Emit(
                        EventRecord::task(now, &task.uid, TaskState::New, TaskState::Failed)
                            .with_detail("error", "unsatisfiable")
                            .with_detail("instance", core.id()),
                    ));
                }
            }
            InstanceMsg::Finished(uid, finish) => {
                pids.remove(&uid);
                core.finish(&uid, finish, now, &mut actions);
            }
            InstanceMsg::Cancel(uid) => {
                if core.cancel(&uid, now, &mut actions) {
                    if let Some(pid) = pids.remove(&uid) {
                        kill_pid(pid);
                    }
                }
            }
            InstanceMsg::CancelAll => {
                let executing = core.cancel_all(now, &mut actions);
                for uid in executing {
                    if let Some(pid) = pids.remove(&uid) {
                        kill_pid(pid);
                    }
                }
            }
            InstanceMsg::Stop => break,
        }
        // Launches spawn here so the instance knows payload pids before
        // anything else can race a cancel.
        for action in actions {
            match action {
                InstanceAction::Emit(record) => {
                    let _ = conv_tx.send((idx, record));
                }
                InstanceAction::Launch { task, .. } => {
                    launch(&task, &self_tx, &functions, &mut pids);
                }
            }
        }
    }
}

fn kill_pid(pid: u32) {
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGKILL);
    }
}

fn launch(
    task: &TaskDescription,
    self_tx: &Sender<InstanceMsg>,
    functions: &Arc<FunctionRegistry>,
    pids: &mut HashMap<String, u32>,
) {
    let uid = task.uid.clone();
    match &task.payload {
        TaskPayload::Executable {
            executable,
            arguments,
        } => {
            let spawned = Command::new(executable)
                .args(arguments)
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn();
            match spawned {
                Ok(mut child) => {
                    pids.insert(uid.clone(), child.id());
                    let tx = self_tx.clone();
                    std::thread::spawn(move || {
                        let finish = match child.wait() {
                            Ok(status) => match status.code() {
                                Some(code) => TaskFinish::exit(code),
                                None => TaskFinish {
                                    exit_code: -1,
                                    result: None,
                                    error: Some("killed by signal".into()),
                                },
                            },
                            Err(e) => TaskFinish {
                                exit_code: -1,
                                result: None,
                                error: Some(e.to_string()),
                            },
                        };
                        let _ = tx.send(InstanceMsg::Finished(uid, finish));
                    });
                }
                Err(e) => {
                    let _ = self_tx.send(InstanceMsg::Finished(
                        uid,
                        TaskFinish {
                            exit_code: -1,
                            result: None,
                            error: Some(format!("launch failed: {e}")),
                        },
                    ));
                }
            }
        }
        TaskPayload::Function {
            function,
            arguments,
        } => {
            let tx = self_tx.clone();
            let functions = Arc::clone(functions);
            let function = function.clone();
            let arguments = arguments.clone();
            std::thread::spawn(move || {
                let finish = match functions.call(&function, &arguments) {
                    Ok(value) => TaskFinish {
                        exit_code: 0,
                        result: Some(value),
                        error: None,
                    },
                    Err(err) => TaskFinish {
                        exit_code: 1,
                        result: None,
                        error: Some(err),
                    },
                };
                let _ = tx.send(InstanceMsg::Finished(uid, finish));
            });
        }
    }
}

/// Single consumer of all instance event channels; the only thread
/// that mutates the pilot task table.
fn conversion_loop(rx: Receiver<(usize, EventRecord)>, shared: Arc<Shared>) {
    while let Ok((idx, record)) = rx.recv() {
        let mut state = shared.state.lock().unwrap();
        state.events.push(record.clone());
        match convert_event(&record) {
            Ok(update) => {
                if apply_update(&mut state.tasks, &update) {
                    if idx < state.loads.len() && state.loads[idx] > 0 {
                        state.loads[idx] -= 1;
                    }
                    state.notifications.push_back(update);
                    shared.cv.notify_all();
                }
            }
            Err(unknown) => {
                state.unknown_events.push(unknown);
                shared.cv.notify_all();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pilot(walltime_s: u64) -> (LocalExecutor, RealPilot) {
        let executor = LocalExecutor::new();
        let pilot = RealPilot::submit(
            &executor,
            PilotDescription::new(1, 1, walltime_s),
            Arc::new(FunctionRegistry::with_builtins()),
        )
        .unwrap();
        pilot.wait_ready(30_000).unwrap();
        (executor, pilot)
    }

    fn shell_task(uid: &str, script: &str) -> TaskDescription {
        TaskDescription::executable(uid, "/bin/sh").with_args(&["-c", script])
    }

    #[test]
    fn tasks_execute_and_complete() {
        let (_exec, pilot) = pilot(300);
        pilot
            .submit_tasks(vec![
                shell_task("ok", "exit 0"),
                shell_task("bad", "exit 3"),
                TaskDescription::function("fun", "add").with_args(&["40", "2"]),
            ])
            .unwrap();
        pilot.wait_all(30_000).unwrap();
        assert_eq!(pilot.task("ok").unwrap().state, TaskState::Done);
        let bad = pilot.task("bad").unwrap();
        assert_eq!(bad.state, TaskState::Failed);
        assert_eq!(bad.exit_code, Some(3));
        let fun = pilot.task("fun").unwrap();
        assert_eq!(fun.state, TaskState::Done);
        assert_eq!(fun.result.as_deref(), Some("42"));
        assert_eq!(pilot.shutdown(Some(5_000)), PilotPhase::Completed);
    }

    #[test]
    fn watcher_sees_every_terminal() {
        let (_exec, pilot) = pilot(300);
        let seen = Arc::new(Mutex::new(Vec::new()));
        {
            let seen = Arc::clone(&seen);
            pilot.add_watcher(move |u| seen.lock().unwrap().push(u.uid.clone()));
        }
        pilot
            .submit_tasks(vec![shell_task("a", "exit 0"), shell_task("b", "exit 0")])
            .unwrap();
        let first = pilot.next_terminal(30_000).unwrap();
        let second = pilot.next_terminal(30_000).unwrap();
        assert_ne!(first.uid, second.uid);
        let seen = seen.lock().unwrap().clone();
        assert_eq!(seen.len(), 2);
        pilot.shutdown(Some(1_000));
    }

    #[test]
    fn cancel_executing_task() {
        let (_exec, pilot) = pilot(300);
        pilot
            .submit_tasks(vec![shell_task("slow", "sleep 600")])
            .unwrap();
        // Let it start, then cancel.
        std::thread::sleep(Duration::from_millis(300));
        pilot.cancel_task("slow").unwrap();
        pilot.wait_all(30_000).unwrap();
        assert_eq!(pilot.task("slow").unwrap().state, TaskState::Canceled);
        pilot.shutdown(Some(1_000));
    }

    #[test]
    fn walltime_expiry_fails_pilot_and_cancels_tasks() {
        let executor = LocalExecutor::new();
        let pilot = RealPilot::submit(
            &executor,
            PilotDescription::new(1, 1, 1),
            Arc::new(FunctionRegistry::with_builtins()),
        )
        .unwrap();
        pilot.wait_ready(30_000).unwrap();
        pilot
            .submit_tasks(vec![shell_task("doomed", "sleep 600")])
            .unwrap();
        pilot.wait_all(30_000).unwrap();
        assert_eq!(pilot.task("doomed").unwrap().state, TaskState::Canceled);
        let deadline = Instant::now() + Duration::from_secs(20);
        while pilot.phase() != PilotPhase::Failed {
            assert!(Instant::now() < deadline, "pilot never failed");
            std::thread::sleep(Duration::from_millis(50));
        }
        let job = executor.wait(pilot.job_id(), Some(10_000)).unwrap();
        assert_eq!(job.state, JobState::Failed);
    }

    #[test]
    fn oversized_task_rejected() {
        let (_exec, pilot) = pilot(300);
        let cores = LocalExecutor::host_cores();
        let too_big = TaskDescription::executable("big", "/bin/true").with_shape(cores + 1, 1, 0);
        assert_eq!(
            pilot.submit_tasks(vec![too_big]).unwrap_err(),
            PilotError::Unsatisfiable { uid: "big".into() }
        );
        let gpu = TaskDescription::executable("gpu", "/bin/true").with_shape(1, 1, 1);
        assert!(matches!(
            pilot.submit_tasks(vec![gpu]).unwrap_err(),
            PilotError::Unsatisfiable { .. }
        ));
        pilot.shutdown(Some(1_000));
    }

    #[test]
    fn multi_node_pilot_rejected_locally() {
        let executor = LocalExecutor::new();
        let outcome = RealPilot::submit(
            &executor,
            PilotDescription::new(2, 1, 60),
            Arc::new(FunctionRegistry::with_builtins()),
        );
        match outcome {
            Err(PilotError::Submission(_)) => {}
            Err(other) => panic!("expected submission error, got {other:?}"),
            Ok(_) => panic!("expected submission error"),
        }
    }

    #[test]
    fn event_stream_orders_per_task() {
        use crate::model::{StateMachine, StateValue};
        let (_exec, pilot) = pilot(300);
        pilot
            .submit_tasks(vec![shell_task("t1", "exit 0"), shell_task("t2", "exit 1")])
            .unwrap();
        pilot.wait_all(30_000).unwrap();
        let events = pilot.events();
        for uid in ["t1", "t2"] {
            let path: Vec<TaskState> = events
                .iter()
                .filter(|e| e.subject_id == uid)
                .map(|e| match e.new_state {
                    StateValue::Task(s) => s,
                    _ => panic!("task event expected"),
                })
                .collect();
            assert_eq!(path[0], TaskState::Scheduling);
            assert!(path.windows(2).all(|w| w[0].can_transition(w[1])));
            assert!(path.last().unwrap().is_terminal());
        }
        pilot.shutdown(Some(1_000));
    }
}
