//! Submit-script rendering from data-defined dialect templates.
//!
//! A template maps job-spec fields to batch directives and provides a
//! launch line with the rank count substituted. Dialects ship as TOML
//! data, not code: the renderer is generic over whatever the template
//! declares. Rendering is deterministic — the same spec and template
//! produce identical bytes.

use crate::model::ValidatedJobSpec;
use serde::Deserialize;
use thiserror::Error;

/// Spec fields that affect placement. Every template must either map
/// each of these to a directive or mark it unsupported explicitly.
pub const PLACEMENT_FIELDS: [&str; 7] = [
    "node_count",
    "process_count",
    "walltime_s",
    "queue",
    "project",
    "stdout_path",
    "stderr_path",
];

/// One field mapping: a directive format with a `{value}` slot, or an
/// explicit refusal.
#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct DirectiveSpec {
    pub field: String,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub unsupported: bool,
}

/// A batch dialect, loaded from TOML.
#[derive(Clone, Debug, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ScriptTemplate {
    pub dialect: String,
    pub directive_prefix: String,
    pub launch_line: String,
    #[serde(rename = "directive")]
    pub directives: Vec<DirectiveSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template parse error: {0}")]
    Parse(String),
    #[error("template {dialect} lacks a directive or unsupported marker for {field}")]
    MissingCoverage { dialect: String, field: String },
    #[error("directive for {0} needs a {{value}} placeholder")]
    BadFormat(String),
    #[error("launch line needs a {{command}} placeholder")]
    BadLaunchLine,
    #[error("field {field} is set but dialect {dialect} marks it unsupported")]
    Unsupported { dialect: String, field: String },
}

const SLURM_LIKE: &str = include_str!("templates/slurm-like.toml");
const PBS_LIKE: &str = include_str!("templates/pbs-like.toml");

impl ScriptTemplate {
    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        let template: ScriptTemplate =
            toml::from_str(text).map_err(|e| TemplateError::Parse(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    /// Shipped dialects.
    pub fn builtin(dialect: &str) -> Option<ScriptTemplate> {
        let text = match dialect {
            "slurm-like" => SLURM_LIKE,
            "pbs-like" => PBS_LIKE,
            _ => return None,
        };
        Some(ScriptTemplate::from_toml(text).expect("shipped templates are valid"))
    }

    pub fn builtin_dialects() -> [&'static str; 2] {
        ["slurm-like", "pbs-like"]
    }

    fn validate(&self) -> Result<(), TemplateError> {
        for field in PLACEMENT_FIELDS {
            let entry = self.directives.iter().find(|d| d.field == field);
            match entry {
                None => {
                    return Err(TemplateError::MissingCoverage {
                        dialect: self.dialect.clone(),
                        field: field.to_string(),
                    })
                }
                Some(d) if !d.unsupported => {
                    let format = d.format.as_deref().unwrap_or("");
                    if !format.contains("{value}") {
                        return Err(TemplateError::BadFormat(field.to_string()));
                    }
                }
                Some(_) => {}
            }
        }
        if !self.launch_line.contains("{command}") {
            return Err(TemplateError::BadLaunchLine);
        }
        Ok(())
    }
}

fn format_walltime(seconds: u64) -> String {
    let h = seconds / 3600;
    let m = (seconds % 3600) / 60;
    let s = seconds % 60;
    format!("{h:02}:{m:02}:{s:02}")
}

/// Shell-quotes one word for the launch line.
fn quote(word: &str) -> String {
    let safe = word
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/' | '=' | '@' | ':' | ',' | '+' | '%'));
    if safe && !word.is_empty() {
        return word.to_string();
    }
    let mut out = String::with_capacity(word.len() + 2);
    out.push('"');
    for c in word.chars() {
        if matches!(c, '"' | '\\' | '$' | '`') {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Value a spec carries for a placement field, when set.
fn field_value(spec: &ValidatedJobSpec, field: &str) -> Option<String> {
    match field {
        "node_count" => {
            let n = spec.resources.node_count;
            (n > 0).then(|| n.to_string())
        }
        "process_count" => Some(spec.resources.process_count.to_string()),
        "walltime_s" => Some(format_walltime(spec.walltime_s())),
        "queue" => spec.queue.clone(),
        "project" => spec.project.clone(),
        "stdout_path" => spec.stdout_path.clone(),
        "stderr_path" => spec.stderr_path.clone(),
        _ => None,
    }
}

/// Renders the submit script: shebang, directive block in template
/// order, environment export block, then the launch line.
pub fn render_submit_script(
    template: &ScriptTemplate,
    spec: &ValidatedJobSpec,
) -> Result<String, TemplateError> {
    template.validate()?;

    let mut directives = Vec::new();
    for d in &template.directives {
        let Some(value) = field_value(spec, &d.field) else {
            continue;
        };
        if d.unsupported {
            return Err(TemplateError::Unsupported {
                dialect: template.dialect.clone(),
                field: d.field.clone(),
            });
        }
        let format = d.format.as_deref().expect("validated above");
        directives.push(format.replace("{value}", &value));
    }

    let exports: Vec<String> = spec
        .environment
        .iter()
        .map(|(k, v)| format!("export {}={}", k, quote(v)))
        .collect();

    let mut command = quote(&spec.executable);
    for arg in &spec.arguments {
        command.push(' ');
        command.push_str(&quote(arg));
    }
    let launch = template
        .launch_line
        .replace("{process_count}", &spec.resources.process_count.to_string())
        .replace("{command}", &command);

    let mut script = String::from("#!/bin/bash\n");
    for line in &directives {
        script.push_str(line);
        script.push('\n');
    }
    script.push('\n');
    if !exports.is_empty() {
        for line in &exports {
            script.push_str(line);
            script.push('\n');
        }
        script.push('\n');
    }
    script.push_str(&launch);
    script.push('\n');
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_job_spec, JobSpec};

    fn spec_8_ranks() -> ValidatedJobSpec {
        let mut spec = JobSpec::new("/opt/app/solver");
        spec.resources.process_count = 8;
        spec.walltime_s = 3600;
        validate_job_spec(&spec).unwrap()
    }

    #[test]
    fn slurm_like_renders_rank_count() {
        let template = ScriptTemplate::builtin("slurm-like").unwrap();
        let script = render_submit_script(&template, &spec_8_ranks()).unwrap();
        assert!(script.contains("#SBATCH --ntasks=8"));
        assert!(script.contains("#SBATCH --time=01:00:00"));
        assert!(script.ends_with("srun -n 8 /opt/app/solver\n"));
        assert!(script.starts_with("#!/bin/bash\n"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let template = ScriptTemplate::builtin("pbs-like").unwrap();
        let spec = spec_8_ranks();
        let a = render_submit_script(&template, &spec).unwrap();
        let b = render_submit_script(&template, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn queue_directive_appears_exactly_once() {
        let template = ScriptTemplate::builtin("pbs-like").unwrap();
        let mut spec = JobSpec::new("/bin/app");
        spec.queue = Some("debug".into());
        spec.walltime_s = 60;
        let validated = validate_job_spec(&spec).unwrap();
        let script = render_submit_script(&template, &validated).unwrap();
        assert_eq!(script.matches("#PBS -q debug").count(), 1);
    }

    #[test]
    fn exports_are_sorted_and_quoted() {
        let template = ScriptTemplate::builtin("slurm-like").unwrap();
        let mut spec = JobSpec::new("/bin/app");
        spec.walltime_s = 60;
        spec.environment.insert("ZMODE".into(), "fast".into());
        spec.environment
            .insert("APP_FLAGS".into(), "--a --b".into());
        let validated = validate_job_spec(&spec).unwrap();
        let script = render_submit_script(&template, &validated).unwrap();
        let a = script.find("export APP_FLAGS=\"--a --b\"").unwrap();
        let z = script.find("export ZMODE=fast").unwrap();
        assert!(a < z);
    }

    #[test]
    fn unsupported_field_errors_when_set() {
        let text = r##"
dialect = "narrow"
directive_prefix = "#X"
launch_line = "run -n {process_count} {command}"

[[directive]]
field = "node_count"
format = "#X nodes {value}"

[[directive]]
field = "process_count"
format = "#X procs {value}"

[[directive]]
field = "walltime_s"
format = "#X time {value}"

[[directive]]
field = "queue"
unsupported = true

[[directive]]
field = "project"
unsupported = true

[[directive]]
field = "stdout_path"
unsupported = true

[[directive]]
field = "stderr_path"
unsupported = true
"##;
        let template = ScriptTemplate::from_toml(text).unwrap();
        let mut spec = JobSpec::new("/bin/app");
        spec.walltime_s = 60;
        let ok = render_submit_script(&template, &validate_job_spec(&spec).unwrap());
        assert!(ok.is_ok());

        spec.queue = Some("debug".into());
        let err = render_submit_script(&template, &validate_job_spec(&spec).unwrap()).unwrap_err();
        assert_eq!(
            err,
            TemplateError::Unsupported {
                dialect: "narrow".into(),
                field: "queue".into()
            }
        );
    }

    #[test]
    fn incomplete_template_rejected() {
        let text = r##"
dialect = "partial"
directive_prefix = "#X"
launch_line = "run {command}"

[[directive]]
field = "node_count"
format = "#X nodes {value}"
"##;
        let err = ScriptTemplate::from_toml(text).unwrap_err();
        assert!(matches!(err, TemplateError::MissingCoverage { .. }));
    }

    #[test]
    fn walltime_formats_as_hms() {
        assert_eq!(format_walltime(60), "00:01:00");
        assert_eq!(format_walltime(3600), "01:00:00");
        assert_eq!(format_walltime(86400), "24:00:00");
        assert_eq!(format_walltime(363_661), "101:01:01");
    }

    #[test]
    fn unset_optional_fields_emit_no_directive() {
        let template = ScriptTemplate::builtin("slurm-like").unwrap();
        let script = render_submit_script(&template, &spec_8_ranks()).unwrap();
        assert!(!script.contains("--partition"));
        assert!(!script.contains("--account"));
        assert!(!script.contains("--nodes"));
    }
}
