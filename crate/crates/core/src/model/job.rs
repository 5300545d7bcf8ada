//! Batch-job requests and their validation.
//!
//! A [`JobSpec`] is written the way a user would express it: unset
//! numeric fields are zero and mean "unspecified". [`validate_job_spec`]
//! resolves those to the documented defaults and checks every invariant,
//! reporting all violations together rather than stopping at the first.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Resource request attached to a job. Zero means "unspecified" for
/// every field except `gpus_per_process`, where zero is a real value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceSpec {
    pub node_count: i64,
    pub process_count: i64,
    pub processes_per_node: i64,
    pub cores_per_process: i64,
    pub gpus_per_process: i64,
}

/// A batch-job request: what to run, where, and within which limits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobSpec {
    pub executable: String,
    pub arguments: Vec<String>,
    pub environment: BTreeMap<String, String>,
    /// Working directory; empty resolves to the current directory.
    pub directory: String,
    pub stdout_path: Option<String>,
    pub stderr_path: Option<String>,
    pub resources: ResourceSpec,
    /// Wall-clock limit in seconds; zero resolves to the default.
    pub walltime_s: i64,
    pub queue: Option<String>,
    pub project: Option<String>,
}

/// Default walltime applied when a spec leaves `walltime_s` unset.
pub const DEFAULT_WALLTIME_S: u64 = 3600;

impl Default for JobSpec {
    fn default() -> Self {
        JobSpec {
            executable: String::new(),
            arguments: Vec::new(),
            environment: BTreeMap::new(),
            directory: String::new(),
            stdout_path: None,
            stderr_path: None,
            resources: ResourceSpec::default(),
            walltime_s: 0,
            queue: None,
            project: None,
        }
    }
}

impl JobSpec {
    pub fn new(executable: impl Into<String>) -> Self {
        JobSpec {
            executable: executable.into(),
            ..JobSpec::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("job spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// One violated invariant, named by field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

/// All invariant violations found in one spec.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ValidationError {
    pub violations: Vec<FieldViolation>,
}

impl ValidationError {
    pub fn single(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ValidationError {
            violations: vec![FieldViolation {
                field: field.into(),
                reason: reason.into(),
            }],
        }
    }

    pub fn names(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid spec: ")?;
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// A spec that passed validation; every unspecified field is resolved.
///
/// Guarantees: non-empty executable, `process_count >= 1`,
/// `cores_per_process >= 1`, `walltime_s >= 1`, non-empty directory,
/// and `node_count * processes_per_node == process_count` whenever both
/// factors are set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatedJobSpec(JobSpec);

impl ValidatedJobSpec {
    pub fn spec(&self) -> &JobSpec {
        &self.0
    }

    pub fn into_spec(self) -> JobSpec {
        self.0
    }

    pub fn node_count(&self) -> u32 {
        self.0.resources.node_count as u32
    }

    pub fn process_count(&self) -> u32 {
        self.0.resources.process_count as u32
    }

    pub fn walltime_s(&self) -> u64 {
        self.0.walltime_s as u64
    }

    /// Canonical key/value serialization of the resolved spec.
    pub fn to_canonical_toml(&self) -> String {
        self.0.to_toml()
    }
}

impl std::ops::Deref for ValidatedJobSpec {
    type Target = JobSpec;

    fn deref(&self) -> &JobSpec {
        &self.0
    }
}

/// Resolves defaults and checks all invariants, reporting every
/// violation at once. Validation is idempotent: feeding the resolved
/// spec back in returns an equal spec.
pub fn validate_job_spec(spec: &JobSpec) -> Result<ValidatedJobSpec, ValidationError> {
    let mut violations = Vec::new();
    let mut resolved = spec.clone();

    if resolved.executable.is_empty() {
        violations.push(FieldViolation {
            field: "executable".into(),
            reason: "empty".into(),
        });
    }

    let res = &mut resolved.resources;
    for (field, value) in [
        ("node_count", res.node_count),
        ("process_count", res.process_count),
        ("processes_per_node", res.processes_per_node),
        ("cores_per_process", res.cores_per_process),
        ("gpus_per_process", res.gpus_per_process),
    ] {
        if value < 0 {
            violations.push(FieldViolation {
                field: format!("resources.{field}"),
                reason: "negative".into(),
            });
        }
    }
    if resolved.walltime_s < 0 {
        violations.push(FieldViolation {
            field: "walltime_s".into(),
            reason: "negative".into(),
        });
    }
    if !violations.is_empty() {
        // Negative values make later arithmetic meaningless; stop here.
        return Err(ValidationError { violations });
    }

    if res.process_count == 0 {
        res.process_count = if res.node_count > 0 && res.processes_per_node > 0 {
            res.node_count * res.processes_per_node
        } else {
            1
        };
    }
    if res.cores_per_process == 0 {
        res.cores_per_process = 1;
    }
    if res.node_count > 0
        && res.processes_per_node > 0
        && res.node_count * res.processes_per_node != res.process_count
    {
        violations.push(FieldViolation {
            field: "process_count".into(),
            reason: "inconsistent".into(),
        });
    }

    if resolved.walltime_s == 0 {
        resolved.walltime_s = DEFAULT_WALLTIME_S as i64;
    }
    if resolved.directory.is_empty() {
        resolved.directory = std::env::current_dir()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| ".".to_string());
    }

    if violations.is_empty() {
        Ok(ValidatedJobSpec(resolved))
    } else {
        Err(ValidationError { violations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_gets_defaults() {
        let validated = validate_job_spec(&JobSpec::new("/bin/date")).unwrap();
        assert_eq!(validated.resources.process_count, 1);
        assert_eq!(validated.resources.cores_per_process, 1);
        assert_eq!(validated.resources.gpus_per_process, 0);
        assert_eq!(validated.walltime_s, DEFAULT_WALLTIME_S as i64);
        assert!(!validated.directory.is_empty());
    }

    #[test]
    fn empty_executable_rejected() {
        let mut spec = JobSpec::new("");
        spec.walltime_s = 60;
        let err = validate_job_spec(&spec).unwrap_err();
        assert!(err.names("executable"));
        assert_eq!(err.violations[0].reason, "empty");
    }

    #[test]
    fn consistent_node_arithmetic_accepted() {
        // 2 nodes x 4 processes per node = 8 processes.
        let mut spec = JobSpec::new("/bin/date");
        spec.resources.node_count = 2;
        spec.resources.processes_per_node = 4;
        spec.resources.process_count = 8;
        assert!(validate_job_spec(&spec).is_ok());
    }

    #[test]
    fn inconsistent_node_arithmetic_rejected() {
        let mut spec = JobSpec::new("/bin/date");
        spec.resources.node_count = 2;
        spec.resources.processes_per_node = 4;
        spec.resources.process_count = 7;
        let err = validate_job_spec(&spec).unwrap_err();
        assert!(err.names("process_count"));
        assert_eq!(err.violations[0].reason, "inconsistent");
    }

    #[test]
    fn process_count_derived_when_unset() {
        let mut spec = JobSpec::new("/bin/date");
        spec.resources.node_count = 3;
        spec.resources.processes_per_node = 2;
        let validated = validate_job_spec(&spec).unwrap();
        assert_eq!(validated.resources.process_count, 6);
    }

    #[test]
    fn multiple_violations_reported_together() {
        let mut spec = JobSpec::new("");
        spec.walltime_s = -1;
        spec.resources.cores_per_process = -2;
        let err = validate_job_spec(&spec).unwrap_err();
        assert!(err.names("executable"));
        assert!(err.names("walltime_s"));
        assert!(err.names("resources.cores_per_process"));
        assert_eq!(err.violations.len(), 3);
    }

    #[test]
    fn validation_is_idempotent() {
        let mut spec = JobSpec::new("/bin/echo");
        spec.arguments = vec!["hi".into()];
        spec.walltime_s = 120;
        let once = validate_job_spec(&spec).unwrap();
        let twice = validate_job_spec(once.spec()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn toml_round_trip() {
        let mut spec = JobSpec::new("/usr/bin/env");
        spec.arguments = vec!["python3".into(), "run.py".into()];
        spec.environment.insert("MODE".into(), "fast".into());
        spec.resources.process_count = 8;
        spec.walltime_s = 3600;
        spec.queue = Some("debug".into());
        let text = spec.to_toml();
        let back = JobSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
    }
}
