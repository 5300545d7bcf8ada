//! Job and task lifecycle state machines.
//!
//! Both graphs are fixed: terminal states admit no outgoing edges, and
//! every runtime module funnels its state changes through
//! [`transition`] so an illegal edge can never be recorded silently.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Lifecycle of a batch job submitted through an executor backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    New,
    Queued,
    Active,
    Completed,
    Failed,
    Canceled,
}

/// Lifecycle of a pilot-level task scheduled by a nested instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaskState {
    New,
    Scheduling,
    Executing,
    Done,
    Failed,
    Canceled,
}

/// Common surface over the two lifecycle graphs.
pub trait StateMachine: Copy + Eq + fmt::Display {
    fn is_terminal(self) -> bool;
    fn can_transition(self, next: Self) -> bool;
}

impl StateMachine for JobState {
    fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Canceled)
    }

    fn can_transition(self, next: Self) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (New, Queued)
                | (Queued, Active)
                | (Queued, Canceled)
                | (Queued, Failed)
                | (Active, Completed)
                | (Active, Failed)
                | (Active, Canceled)
        )
    }
}

impl StateMachine for TaskState {
    fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed | TaskState::Canceled)
    }

    fn can_transition(self, next: Self) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (New, Scheduling)
                | (Scheduling, Executing)
                | (Scheduling, Canceled)
                | (Scheduling, Failed)
                | (Executing, Done)
                | (Executing, Failed)
                | (Executing, Canceled)
        )
    }
}

/// Attempted edge not present in the lifecycle graph.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("illegal transition {current} -> {next}")]
pub struct IllegalTransition {
    pub current: String,
    pub next: String,
}

/// Checks that `current -> next` is a legal edge and returns `next`.
pub fn transition<S: StateMachine>(current: S, next: S) -> Result<S, IllegalTransition> {
    if current.can_transition(next) {
        Ok(next)
    } else {
        Err(IllegalTransition {
            current: current.to_string(),
            next: next.to_string(),
        })
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobState::New => "NEW",
            JobState::Queued => "QUEUED",
            JobState::Active => "ACTIVE",
            JobState::Completed => "COMPLETED",
            JobState::Failed => "FAILED",
            JobState::Canceled => "CANCELED",
        };
        f.write_str(s)
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskState::New => "NEW",
            TaskState::Scheduling => "SCHEDULING",
            TaskState::Executing => "EXECUTING",
            TaskState::Done => "DONE",
            TaskState::Failed => "FAILED",
            TaskState::Canceled => "CANCELED",
        };
        f.write_str(s)
    }
}

impl FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NEW" => Ok(JobState::New),
            "QUEUED" => Ok(JobState::Queued),
            "ACTIVE" => Ok(JobState::Active),
            "COMPLETED" => Ok(JobState::Completed),
            "FAILED" => Ok(JobState::Failed),
            "CANCELED" => Ok(JobState::Canceled),
            other => Err(format!("unknown job state {other:?}")),
        }
    }
}

impl FromStr for TaskState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NEW" => Ok(TaskState::New),
            "SCHEDULING" => Ok(TaskState::Scheduling),
            "EXECUTING" => Ok(TaskState::Executing),
            "DONE" => Ok(TaskState::Done),
            "FAILED" => Ok(TaskState::Failed),
            "CANCELED" => Ok(TaskState::Canceled),
            other => Err(format!("unknown task state {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_legal_edges() {
        assert_eq!(transition(JobState::Queued, JobState::Active), Ok(JobState::Active));
        assert_eq!(transition(TaskState::Executing, TaskState::Done), Ok(TaskState::Done));
        assert!(transition(JobState::New, JobState::Queued).is_ok());
        assert!(transition(TaskState::New, TaskState::Scheduling).is_ok());
    }

    #[test]
    fn terminal_states_have_no_outgoing_edges() {
        let job_states = [
            JobState::New,
            JobState::Queued,
            JobState::Active,
            JobState::Completed,
            JobState::Failed,
            JobState::Canceled,
        ];
        for from in job_states {
            if from.is_terminal() {
                for to in job_states {
                    assert!(transition(from, to).is_err(), "{from} -> {to} must be illegal");
                }
            }
        }
        let err = transition(JobState::Completed, JobState::Active).unwrap_err();
        assert_eq!(err.current, "COMPLETED");
        assert_eq!(err.next, "ACTIVE");
    }

    #[test]
    fn task_terminals_reject_everything() {
        let task_states = [
            TaskState::New,
            TaskState::Scheduling,
            TaskState::Executing,
            TaskState::Done,
            TaskState::Failed,
            TaskState::Canceled,
        ];
        for from in [TaskState::Done, TaskState::Failed, TaskState::Canceled] {
            for to in task_states {
                assert!(transition(from, to).is_err());
            }
        }
    }

    #[test]
    fn exact_edge_counts() {
        // 7 legal job edges, 7 legal task edges; anything else is a bug.
        let job_states = [
            JobState::New,
            JobState::Queued,
            JobState::Active,
            JobState::Completed,
            JobState::Failed,
            JobState::Canceled,
        ];
        let legal = job_states
            .iter()
            .flat_map(|a| job_states.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_transition(*b))
            .count();
        assert_eq!(legal, 7);

        let task_states = [
            TaskState::New,
            TaskState::Scheduling,
            TaskState::Executing,
            TaskState::Done,
            TaskState::Failed,
            TaskState::Canceled,
        ];
        let legal = task_states
            .iter()
            .flat_map(|a| task_states.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| a.can_transition(*b))
            .count();
        assert_eq!(legal, 7);
    }

    #[test]
    fn display_round_trips() {
        for s in ["NEW", "QUEUED", "ACTIVE", "COMPLETED", "FAILED", "CANCELED"] {
            assert_eq!(JobState::from_str(s).unwrap().to_string(), s);
        }
        for s in ["NEW", "SCHEDULING", "EXECUTING", "DONE", "FAILED", "CANCELED"] {
            assert_eq!(TaskState::from_str(s).unwrap().to_string(), s);
        }
    }
}
