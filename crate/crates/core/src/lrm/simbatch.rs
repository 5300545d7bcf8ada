//! Simulated batch backend: the executor face of a [`SimWorld`].
//!
//! All durations are in ticks. `wait` drives the simulation forward,
//! so a plain executor-level test advances virtual time without
//! touching the world directly.

use crate::lrm::{
    CancelOutcome, Capability, ExecutorDescriptor, JobExecutor, JobHandle, LrmError,
};
use crate::model::{EventRecord, ValidatedJobSpec};
use crate::simcluster::SimWorld;
use std::sync::{Arc, Mutex};

/// Executor backed by a shared simulated world.
#[derive(Clone)]
pub struct SimBatchExecutor {
    world: Arc<Mutex<SimWorld>>,
}

impl SimBatchExecutor {
    pub fn new(world: Arc<Mutex<SimWorld>>) -> Self {
        SimBatchExecutor { world }
    }

    pub fn world(&self) -> Arc<Mutex<SimWorld>> {
        Arc::clone(&self.world)
    }
}

impl JobExecutor for SimBatchExecutor {
    fn descriptor(&self) -> ExecutorDescriptor {
        ExecutorDescriptor::new("sim-batch", [Capability::Simulated])
    }

    fn submit(&self, spec: &ValidatedJobSpec) -> Result<JobHandle, LrmError> {
        self.world.lock().unwrap().submit_job(spec.clone())
    }

    fn cancel(&self, job_id: &str) -> Result<CancelOutcome, LrmError> {
        self.world.lock().unwrap().cancel_job(job_id)
    }

    fn status(&self, job_id: &str) -> Result<JobHandle, LrmError> {
        self.world.lock().unwrap().job_snapshot(job_id)
    }

    fn wait(&self, job_id: &str, timeout: Option<u64>) -> Result<JobHandle, LrmError> {
        let mut world = self.world.lock().unwrap();
        let deadline = timeout.map(|t| world.now() + t);
        loop {
            let snapshot = world.job_snapshot(job_id)?;
            if snapshot.is_terminal() {
                return Ok(snapshot);
            }
            // Stop without advancing past the deadline: ticks only move
            // to scheduled event times.
            match world.next_event_tick() {
                Some(tick) if deadline.map_or(true, |d| tick <= d) => {
                    world.step().expect("next tick was just observed");
                }
                _ => return Err(LrmError::Timeout(job_id.to_string())),
            }
        }
    }

    fn events(&self) -> Vec<EventRecord> {
        self.world.lock().unwrap().events().to_vec()
    }
}
