//! Pilot-level task descriptions.
//!
//! A task is the unit scheduled by nested instances: a payload plus a
//! rank-shaped resource request. Payloads are either an executable
//! command line or the name of a function registered with the runtime.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// What a task runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum TaskPayload {
    #[serde(rename = "EXECUTABLE")]
    Executable {
        executable: String,
        #[serde(default)]
        arguments: Vec<String>,
    },
    #[serde(rename = "FUNCTION")]
    Function {
        function: String,
        #[serde(default)]
        arguments: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Executable,
    Function,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Executable => f.write_str("EXECUTABLE"),
            TaskKind::Function => f.write_str("FUNCTION"),
        }
    }
}

fn default_one() -> u32 {
    1
}

/// A schedulable task: `ranks` ranks, each holding `cores_per_rank`
/// cores and `gpus_per_rank` GPUs on a single node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub uid: String,
    #[serde(default = "default_one")]
    pub ranks: u32,
    #[serde(default = "default_one")]
    pub cores_per_rank: u32,
    #[serde(default)]
    pub gpus_per_rank: u32,
    /// Simulated run length in ticks; ignored by real backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_duration_s: Option<u64>,
    #[serde(flatten)]
    pub payload: TaskPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("task {uid}: {reason}")]
    Invalid { uid: String, reason: String },
}

impl TaskDescription {
    pub fn executable(uid: impl Into<String>, executable: impl Into<String>) -> Self {
        TaskDescription {
            uid: uid.into(),
            ranks: 1,
            cores_per_rank: 1,
            gpus_per_rank: 0,
            expected_duration_s: None,
            payload: TaskPayload::Executable {
                executable: executable.into(),
                arguments: Vec::new(),
            },
        }
    }

    pub fn function(uid: impl Into<String>, function: impl Into<String>) -> Self {
        TaskDescription {
            uid: uid.into(),
            ranks: 1,
            cores_per_rank: 1,
            gpus_per_rank: 0,
            expected_duration_s: None,
            payload: TaskPayload::Function {
                function: function.into(),
                arguments: Vec::new(),
            },
        }
    }

    pub fn with_args(mut self, args: &[&str]) -> Self {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        match &mut self.payload {
            TaskPayload::Executable { arguments, .. } => *arguments = args,
            TaskPayload::Function { arguments, .. } => *arguments = args,
        }
        self
    }

    pub fn with_shape(mut self, ranks: u32, cores_per_rank: u32, gpus_per_rank: u32) -> Self {
        self.ranks = ranks;
        self.cores_per_rank = cores_per_rank;
        self.gpus_per_rank = gpus_per_rank;
        self
    }

    pub fn with_duration(mut self, ticks: u64) -> Self {
        self.expected_duration_s = Some(ticks);
        self
    }

    pub fn kind(&self) -> TaskKind {
        match self.payload {
            TaskPayload::Executable { .. } => TaskKind::Executable,
            TaskPayload::Function { .. } => TaskKind::Function,
        }
    }

    pub fn total_cores(&self) -> u64 {
        self.ranks as u64 * self.cores_per_rank as u64
    }

    pub fn total_gpus(&self) -> u64 {
        self.ranks as u64 * self.gpus_per_rank as u64
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.uid.is_empty() {
            return Err(TaskError::Invalid {
                uid: self.uid.clone(),
                reason: "empty uid".into(),
            });
        }
        if self.ranks < 1 {
            return Err(TaskError::Invalid {
                uid: self.uid.clone(),
                reason: "ranks must be >= 1".into(),
            });
        }
        if self.cores_per_rank < 1 {
            return Err(TaskError::Invalid {
                uid: self.uid.clone(),
                reason: "cores_per_rank must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("task description serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_carries_kind_and_payload() {
        let task = TaskDescription::executable("t1", "/bin/hostname")
            .with_shape(4, 2, 1)
            .with_duration(10);
        let text = task.to_toml();
        assert!(text.contains("kind = \"EXECUTABLE\""), "got: {text}");
        assert!(text.contains("[payload]"), "got: {text}");
        let back = TaskDescription::from_toml(&text).unwrap();
        assert_eq!(back, task);
    }

    #[test]
    fn function_payload_round_trips() {
        let task = TaskDescription::function("f1", "add").with_args(&["1", "2"]);
        let back = TaskDescription::from_toml(&task.to_toml()).unwrap();
        assert_eq!(back, task);
        assert_eq!(back.kind(), TaskKind::Function);
    }

    #[test]
    fn defaults_apply_on_parse() {
        let text = "uid = \"t\"\nkind = \"EXECUTABLE\"\n[payload]\nexecutable = \"/bin/true\"\n";
        let task = TaskDescription::from_toml(text).unwrap();
        assert_eq!((task.ranks, task.cores_per_rank, task.gpus_per_rank), (1, 1, 0));
        assert_eq!(task.expected_duration_s, None);
    }

    #[test]
    fn zero_ranks_rejected() {
        let task = TaskDescription::executable("t", "/bin/true").with_shape(0, 1, 0);
        assert!(task.validate().is_err());
    }
}
