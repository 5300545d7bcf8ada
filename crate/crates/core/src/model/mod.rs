//! Shared data model: specifications, state machines, and events.
//!
//! Everything in this module is an immutable value object after
//! construction and safe to share across threads; mutable state lives
//! in the runtime modules.

mod event;
mod job;
mod state;
mod task;

pub use event::{EventRecord, StateValue, Time};
pub use job::{
    validate_job_spec, FieldViolation, JobSpec, ResourceSpec, ValidatedJobSpec, ValidationError,
    DEFAULT_WALLTIME_S,
};
pub use state::{transition, IllegalTransition, JobState, StateMachine, TaskState};
pub use task::{TaskDescription, TaskError, TaskKind, TaskPayload};
