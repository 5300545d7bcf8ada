//! Direct executor: runs payloads immediately on the launch host.
//!
//! No pilot, no scheduling — every submitted task starts at once on its
//! own worker thread, so resource shapes are ignored. Useful for
//! exercising the dataflow kernel and for trivial local workflows.

use crate::dataflow::run::{ExecutorUnavailable, TaskExecutor};
use crate::functions::FunctionRegistry;
use crate::lrm::MonotoneMs;
use crate::model::{TaskDescription, TaskPayload, TaskState};
use crate::pilot::{PilotError, TaskUpdate};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::process::{Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

pub struct DirectExecutor {
    functions: Arc<FunctionRegistry>,
    clock: Arc<MonotoneMs>,
    tx: Sender<TaskUpdate>,
    rx: Receiver<TaskUpdate>,
    submitted: BTreeSet<String>,
}

impl DirectExecutor {
    pub fn new(functions: Arc<FunctionRegistry>) -> Self {
        let (tx, rx) = channel();
        DirectExecutor {
            functions,
            clock: Arc::new(MonotoneMs::new()),
            tx,
            rx,
            submitted: BTreeSet::new(),
        }
    }
}

fn terminal_update(
    uid: String,
    timestamp: u64,
    exit_code: i32,
    result: Option<String>,
    error: Option<String>,
) -> TaskUpdate {
    let mut detail = BTreeMap::new();
    detail.insert("exit_code".to_string(), exit_code.to_string());
    if let Some(err) = &error {
        detail.insert("error".to_string(), err.clone());
    }
    let state = if error.is_none() && exit_code == 0 {
        TaskState::Done
    } else {
        TaskState::Failed
    };
    TaskUpdate {
        uid,
        timestamp,
        state,
        exit_code: Some(exit_code),
        result,
        detail,
    }
}

impl TaskExecutor for DirectExecutor {
    fn submit_task(&mut self, task: TaskDescription) -> Result<(), PilotError> {
        task.validate()
            .map_err(|e| PilotError::InvalidTask(e.to_string()))?;
        if !self.submitted.insert(task.uid.clone()) {
            return Err(PilotError::DuplicateUid { uid: task.uid });
        }
        let tx = self.tx.clone();
        let functions = Arc::clone(&self.functions);
        let clock = Arc::clone(&self.clock);
        std::thread::spawn(move || {
            let uid = task.uid.clone();
            let update = match &task.payload {
                TaskPayload::Executable {
                    executable,
                    arguments,
                } => {
                    let status = Command::new(executable)
                        .args(arguments)
                        .stdin(Stdio::null())
                        .stdout(Stdio::null())
                        .stderr(Stdio::null())
                        .status();
                    match status {
                        Ok(status) => match status.code() {
                            Some(code) => {
                                terminal_update(uid, clock.now(), code, Some(String::new()), None)
                            }
                            None => terminal_update(
                                uid,
                                clock.now(),
                                -1,
                                None,
                                Some("killed by signal".into()),
                            ),
                        },
                        Err(e) => terminal_update(
                            uid,
                            clock.now(),
                            -1,
                            None,
                            Some(format!("launch failed: {e}")),
                        ),
                    }
                }
                TaskPayload::Function {
                    function,
                    arguments,
                } => match functions.call(function, arguments) {
                    Ok(value) => terminal_update(uid, clock.now(), 0, Some(value), None),
                    Err(err) => terminal_update(uid, clock.now(), 1, None, Some(err)),
                },
            };
            let _ = tx.send(update);
        });
        Ok(())
    }

    fn next_terminal(&mut self) -> Result<TaskUpdate, ExecutorUnavailable> {
        self.rx
            .recv()
            .map_err(|_| ExecutorUnavailable("direct executor channel closed".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executable_and_function_payloads_run() {
        let mut exec = DirectExecutor::new(Arc::new(FunctionRegistry::with_builtins()));
        exec.submit_task(TaskDescription::executable("sh", "/bin/sh").with_args(&["-c", "exit 0"]))
            .unwrap();
        exec.submit_task(TaskDescription::function("f", "echo").with_args(&["hi"]))
            .unwrap();
        let mut states = BTreeMap::new();
        for _ in 0..2 {
            let u = exec.next_terminal().unwrap();
            states.insert(u.uid.clone(), u);
        }
        assert_eq!(states["sh"].state, TaskState::Done);
        assert_eq!(states["f"].result.as_deref(), Some("hi"));
    }

    #[test]
    fn duplicate_uid_rejected() {
        let mut exec = DirectExecutor::new(Arc::new(FunctionRegistry::with_builtins()));
        exec.submit_task(TaskDescription::function("x", "echo"))
            .unwrap();
        assert!(matches!(
            exec.submit_task(TaskDescription::function("x", "echo")),
            Err(PilotError::DuplicateUid { .. })
        ));
    }
}
