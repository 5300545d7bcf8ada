//! Timestamped state-change records.
//!
//! Every observable state change in the stack — job or task — is an
//! [`EventRecord`]. Simulated runs stamp records with clock ticks, real
//! runs with milliseconds since the Unix epoch. The records double as
//! the input for utilization metrics and for replay checks, so the
//! detail map carries machine-readable placement information.

use crate::model::state::{JobState, TaskState};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Time value: simulation ticks or milliseconds since epoch.
pub type Time = u64;

/// A state drawn from one of the two lifecycle graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateValue {
    Job(JobState),
    Task(TaskState),
}

impl StateValue {
    pub fn kind(&self) -> &'static str {
        match self {
            StateValue::Job(_) => "job",
            StateValue::Task(_) => "task",
        }
    }
}

impl fmt::Display for StateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateValue::Job(s) => s.fmt(f),
            StateValue::Task(s) => s.fmt(f),
        }
    }
}

/// One state change of one subject (job or task).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub timestamp: Time,
    pub subject_id: String,
    pub old_state: StateValue,
    pub new_state: StateValue,
    pub detail: BTreeMap<String, String>,
}

impl EventRecord {
    pub fn job(
        timestamp: Time,
        subject_id: impl Into<String>,
        old: JobState,
        new: JobState,
    ) -> Self {
        EventRecord {
            timestamp,
            subject_id: subject_id.into(),
            old_state: StateValue::Job(old),
            new_state: StateValue::Job(new),
            detail: BTreeMap::new(),
        }
    }

    pub fn task(
        timestamp: Time,
        subject_id: impl Into<String>,
        old: TaskState,
        new: TaskState,
    ) -> Self {
        EventRecord {
            timestamp,
            subject_id: subject_id.into(),
            old_state: StateValue::Task(old),
            new_state: StateValue::Task(new),
            detail: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.detail.insert(key.into(), value.into());
        self
    }

    /// One-line wire form with stable field order:
    /// `<timestamp> <kind> <subject> <old> <new> [key=value ...]`,
    /// detail keys sorted, values percent-escaped.
    pub fn log_line(&self) -> String {
        let mut line = format!(
            "{} {} {} {} {}",
            self.timestamp,
            self.old_state.kind(),
            escape(&self.subject_id),
            self.old_state,
            self.new_state
        );
        for (k, v) in &self.detail {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            line.push_str(&escape(v));
        }
        line
    }

    /// Parses a line produced by [`EventRecord::log_line`].
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let mut parts = line.split(' ');
        let timestamp: Time = parts
            .next()
            .ok_or("missing timestamp")?
            .parse()
            .map_err(|e| format!("bad timestamp: {e}"))?;
        let kind = parts.next().ok_or("missing kind")?;
        let subject_id = unescape(parts.next().ok_or("missing subject")?);
        let old = parts.next().ok_or("missing old state")?;
        let new = parts.next().ok_or("missing new state")?;
        let (old_state, new_state) = match kind {
            "job" => (
                StateValue::Job(JobState::from_str(old)?),
                StateValue::Job(JobState::from_str(new)?),
            ),
            "task" => (
                StateValue::Task(TaskState::from_str(old)?),
                StateValue::Task(TaskState::from_str(new)?),
            ),
            other => return Err(format!("unknown subject kind {other:?}")),
        };
        let mut detail = BTreeMap::new();
        for tok in parts {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("bad detail token {tok:?}"))?;
            detail.insert(k.to_string(), unescape(v));
        }
        Ok(EventRecord {
            timestamp,
            subject_id,
            old_state,
            new_state,
            detail,
        })
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'%' => out.push_str("%25"),
            b' ' => out.push_str("%20"),
            b'\n' => out.push_str("%0A"),
            b'=' => out.push_str("%3D"),
            _ => out.push(b as char),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let decoded = if bytes[i] == b'%' {
            match s.get(i + 1..i + 3) {
                Some("25") => Some('%'),
                Some("20") => Some(' '),
                Some("0A") => Some('\n'),
                Some("3D") => Some('='),
                _ => None,
            }
        } else {
            None
        };
        match decoded {
            Some(c) => {
                out.push(c);
                i += 3;
            }
            None => {
                out.push(bytes[i] as char);
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_stable_order() {
        let rec = EventRecord::task(12, "t-0003", TaskState::Scheduling, TaskState::Executing)
            .with_detail("assignments", "n0:1:0")
            .with_detail("instance", "p0/i0");
        assert_eq!(
            rec.log_line(),
            "12 task t-0003 SCHEDULING EXECUTING assignments=n0:1:0 instance=p0/i0"
        );
    }

    #[test]
    fn round_trips_with_escaping() {
        let rec = EventRecord::job(5, "job 1", JobState::Active, JobState::Failed)
            .with_detail("reason", "launch error: no such file");
        let parsed = EventRecord::parse_line(&rec.log_line()).unwrap();
        assert_eq!(parsed, rec);
    }

    #[test]
    fn rejects_garbage() {
        assert!(EventRecord::parse_line("notanumber job x NEW QUEUED").is_err());
        assert!(EventRecord::parse_line("1 gizmo x NEW QUEUED").is_err());
        assert!(EventRecord::parse_line("1 job x NEW BOGUS").is_err());
    }
}
