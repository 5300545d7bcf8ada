//! Local-process backend: jobs are real processes on the launch host.
//!
//! Single-machine execution only — a spec asking for more than one node
//! is rejected. Each job gets a runner thread that reaps the child and
//! a watchdog that enforces walltime; waits are condvar-driven, never
//! polled. Timestamps are milliseconds since the Unix epoch, clamped
//! monotone per executor.

use crate::lrm::{
    CancelOutcome, Capability, ExecutorDescriptor, JobExecutor, JobHandle, LrmError, MonotoneMs,
    EXIT_CODE_NONE,
};
use crate::model::{EventRecord, JobState, ValidatedJobSpec, ValidationError};
use std::collections::BTreeMap;
use std::fs::File;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KillReason {
    Cancel,
    Walltime,
}

struct JobEntry {
    handle: JobHandle,
    pid: Option<u32>,
    kill_reason: Option<KillReason>,
}

struct Inner {
    jobs: Mutex<BTreeMap<String, JobEntry>>,
    cv: Condvar,
    events: Mutex<Vec<EventRecord>>,
    clock: MonotoneMs,
    seq: AtomicU64,
    shutdown: AtomicBool,
}

/// Executor running jobs as local child processes.
#[derive(Clone)]
pub struct LocalExecutor {
    inner: Arc<Inner>,
}

impl Default for LocalExecutor {
    fn default() -> Self {
        Self::new()
    }
}

impl LocalExecutor {
    pub fn new() -> Self {
        LocalExecutor {
            inner: Arc::new(Inner {
                jobs: Mutex::new(BTreeMap::new()),
                cv: Condvar::new(),
                events: Mutex::new(Vec::new()),
                clock: MonotoneMs::new(),
                seq: AtomicU64::new(0),
                shutdown: AtomicBool::new(false),
            }),
        }
    }

    /// Schedulable cores of the launch host, the single "node" this
    /// backend grants.
    pub fn host_cores() -> u32 {
        std::thread::available_parallelism()
            .map(|n| n.get() as u32)
            .unwrap_or(1)
    }

    /// Stops accepting submissions; running jobs are left to finish.
    pub fn shut_down(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
    }

    /// Condvar-driven wait for an arbitrary handle predicate, used by
    /// the pilot to observe the QUEUED -> ACTIVE edge.
    pub fn wait_for<F>(&self, job_id: &str, pred: F, timeout_ms: u64) -> Result<JobHandle, LrmError>
    where
        F: Fn(&JobHandle) -> bool,
    {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut jobs = self.inner.jobs.lock().unwrap();
        loop {
            let entry = jobs
                .get(job_id)
                .ok_or_else(|| LrmError::NotFound(job_id.to_string()))?;
            if pred(&entry.handle) {
                return Ok(entry.handle.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(LrmError::Timeout(job_id.to_string()));
            }
            let (guard, _) = self
                .inner
                .cv
                .wait_timeout(jobs, deadline - now)
                .expect("lock poisoned");
            jobs = guard;
        }
    }

    fn emit(inner: &Inner, record: EventRecord) {
        inner.events.lock().unwrap().push(record);
    }

    fn kill_pid(pid: u32) {
        unsafe {
            libc::kill(pid as libc::pid_t, libc::SIGKILL);
        }
    }

    /// Marks the job terminal, records timestamps and the event, and
    /// wakes every waiter. Must be called with the jobs lock held.
    fn finish_entry(
        inner: &Inner,
        jobs: &mut BTreeMap<String, JobEntry>,
        job_id: &str,
        state: JobState,
        exit_code: Option<i32>,
        detail: &[(&str, &str)],
    ) {
        let now = inner.clock.now();
        let Some(entry) = jobs.get_mut(job_id) else {
            return;
        };
        let old = entry.handle.state;
        entry.handle.state = state;
        entry.handle.exit_code = exit_code;
        entry.handle.end_time = Some(now);
        entry.pid = None;
        let mut record = EventRecord::job(now, job_id, old, state);
        for (k, v) in detail {
            record.detail.insert((*k).into(), (*v).into());
        }
        if let Some(code) = exit_code {
            record.detail.insert("exit_code".into(), code.to_string());
        }
        Self::emit(inner, record);
        inner.cv.notify_all();
    }

    fn spawn_runner(&self, job_id: String, spec: ValidatedJobSpec) {
        let inner = Arc::clone(&self.inner);
        std::thread::spawn(move || {
            let mut command = Command::new(&spec.executable);
            command
                .args(&spec.arguments)
                .envs(spec.environment.clone())
                .current_dir(&spec.directory)
                .stdin(Stdio::null());
            match &spec.stdout_path {
                Some(path) => match File::create(path) {
                    Ok(f) => {
                        command.stdout(f);
                    }
                    Err(e) => {
                        let mut jobs = inner.jobs.lock().unwrap();
                        Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Failed,
                            Some(EXIT_CODE_NONE),
                            &[("reason", "launch"), ("error", &e.to_string())],
                        );
                        return;
                    }
                },
                None => {
                    command.stdout(Stdio::null());
                }
            }
            match &spec.stderr_path {
                Some(path) => match File::create(path) {
                    Ok(f) => {
                        command.stderr(f);
                    }
                    Err(e) => {
                        let mut jobs = inner.jobs.lock().unwrap();
                        Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Failed,
                            Some(EXIT_CODE_NONE),
                            &[("reason", "launch"), ("error", &e.to_string())],
                        );
                        return;
                    }
                },
                None => {
                    command.stderr(Stdio::null());
                }
            }

            let mut child = {
                let mut jobs = inner.jobs.lock().unwrap();
                let entry = jobs.get_mut(&job_id).expect("entry inserted at submit");
                if entry.handle.state != JobState::Queued {
                    // Canceled before launch.
                    return;
                }
                match command.spawn() {
                    Ok(child) => {
                        let now = inner.clock.now();
                        entry.handle.state = JobState::Active;
                        entry.handle.start_time = Some(now);
                        entry.handle.native_id = Some(child.id().to_string());
                        entry.pid = Some(child.id());
                        Self::emit(
                            &inner,
                            EventRecord::job(now, &job_id, JobState::Queued, JobState::Active)
                                .with_detail("nodes", "local")
                                .with_detail("pid", child.id().to_string()),
                        );
                        inner.cv.notify_all();
                        child
                    }
                    Err(e) => {
                        Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Failed,
                            Some(EXIT_CODE_NONE),
                            &[("reason", "launch"), ("error", &e.to_string())],
                        );
                        return;
                    }
                }
            };

            // Walltime watchdog: wakes early when the job turns
            // terminal, kills the child otherwise.
            {
                let inner = Arc::clone(&inner);
                let job_id = job_id.clone();
                let pid = child.id();
                let walltime = Duration::from_secs(spec.walltime_s());
                std::thread::spawn(move || {
                    let deadline = Instant::now() + walltime;
                    let mut jobs = inner.jobs.lock().unwrap();
                    loop {
                        let Some(entry) = jobs.get_mut(&job_id) else {
                            return;
                        };
                        if entry.handle.state != JobState::Active {
                            return;
                        }
                        let now = Instant::now();
                        if now >= deadline {
                            entry.kill_reason.get_or_insert(KillReason::Walltime);
                            Self::kill_pid(pid);
                            return;
                        }
                        let (guard, _) = inner
                            .cv
                            .wait_timeout(jobs, deadline - now)
                            .expect("lock poisoned");
                        jobs = guard;
                    }
                });
            }

            let status = child.wait();
            let mut jobs = inner.jobs.lock().unwrap();
            let reason = jobs.get(&job_id).and_then(|e| e.kill_reason);
            match reason {
                Some(KillReason::Cancel) => {
                    Self::finish_entry(&inner, &mut jobs, &job_id, JobState::Canceled, None, &[]);
                }
                Some(KillReason::Walltime) => {
                    Self::finish_entry(
                        &inner,
                        &mut jobs,
                        &job_id,
                        JobState::Failed,
                        Some(EXIT_CODE_NONE),
                        &[("reason", "walltime")],
                    );
                }
                None => match status {
                    Ok(status) => match status.code() {
                        Some(0) => Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Completed,
                            Some(0),
                            &[],
                        ),
                        Some(code) => Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Failed,
                            Some(code),
                            &[],
                        ),
                        None => Self::finish_entry(
                            &inner,
                            &mut jobs,
                            &job_id,
                            JobState::Failed,
                            Some(EXIT_CODE_NONE),
                            &[("reason", "signal")],
                        ),
                    },
                    Err(e) => Self::finish_entry(
                        &inner,
                        &mut jobs,
                        &job_id,
                        JobState::Failed,
                        Some(EXIT_CODE_NONE),
                        &[("reason", "wait"), ("error", &e.to_string())],
                    ),
                },
            }
        });
    }
}

impl JobExecutor for LocalExecutor {
    fn descriptor(&self) -> ExecutorDescriptor {
        ExecutorDescriptor::new("local", [Capability::RealExec])
    }

    fn submit(&self, spec: &ValidatedJobSpec) -> Result<JobHandle, LrmError> {
        if self.inner.shutdown.load(Ordering::SeqCst) {
            return Err(LrmError::Submission("executor shut down".into()));
        }
        if spec.resources.node_count > 1 {
            return Err(LrmError::Validation(ValidationError::single(
                "resources.node_count",
                "local backend runs on a single machine",
            )));
        }
        let n = self.inner.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let job_id = format!("local-{n:06}");
        let now = self.inner.clock.now();
        let mut handle = JobHandle::new(&job_id, spec.clone());
        handle.state = JobState::Queued;
        handle.submit_time = Some(now);
        Self::emit(
            &self.inner,
            EventRecord::job(now, &job_id, JobState::New, JobState::Queued),
        );
        self.inner.jobs.lock().unwrap().insert(
            job_id.clone(),
            JobEntry {
                handle: handle.clone(),
                pid: None,
                kill_reason: None,
            },
        );
        self.spawn_runner(job_id, spec.clone());
        Ok(handle)
    }

    fn cancel(&self, job_id: &str) -> Result<CancelOutcome, LrmError> {
        let mut jobs = self.inner.jobs.lock().unwrap();
        let entry = jobs
            .get_mut(job_id)
            .ok_or_else(|| LrmError::NotFound(job_id.to_string()))?;
        match entry.handle.state {
            JobState::Completed | JobState::Failed | JobState::Canceled => {
                Ok(CancelOutcome::AlreadyTerminal)
            }
            JobState::Queued => {
                // Runner has not launched yet; it will observe the
                // terminal state and bail.
                entry.kill_reason.get_or_insert(KillReason::Cancel);
                Self::finish_entry(
                    &self.inner,
                    &mut jobs,
                    job_id,
                    JobState::Canceled,
                    None,
                    &[],
                );
                Ok(CancelOutcome::Canceled)
            }
            JobState::Active => {
                entry.kill_reason.get_or_insert(KillReason::Cancel);
                if let Some(pid) = entry.pid {
                    Self::kill_pid(pid);
                }
                Ok(CancelOutcome::Canceled)
            }
            JobState::New => unreachable!("handles enter the table queued"),
        }
    }

    fn status(&self, job_id: &str) -> Result<JobHandle, LrmError> {
        let jobs = self.inner.jobs.lock().unwrap();
        jobs.get(job_id)
            .map(|e| e.handle.clone())
            .ok_or_else(|| LrmError::NotFound(job_id.to_string()))
    }

    fn wait(&self, job_id: &str, timeout: Option<u64>) -> Result<JobHandle, LrmError> {
        let deadline = timeout.map(|ms| Instant::now() + Duration::from_millis(ms));
        let mut jobs = self.inner.jobs.lock().unwrap();
        loop {
            let entry = jobs
                .get(job_id)
                .ok_or_else(|| LrmError::NotFound(job_id.to_string()))?;
            if entry.handle.is_terminal() {
                return Ok(entry.handle.clone());
            }
            let wait_for = match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(LrmError::Timeout(job_id.to_string()));
                    }
                    d - now
                }
                None => Duration::from_secs(3600),
            };
            let (guard, _) = self
                .inner
                .cv
                .wait_timeout(jobs, wait_for)
                .expect("lock poisoned");
            jobs = guard;
        }
    }

    fn events(&self) -> Vec<EventRecord> {
        self.inner.events.lock().unwrap().clone()
    }
}
