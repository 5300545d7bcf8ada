//! Pilot handle over the simulated world.
//!
//! The handle owns no state of its own: every call locks the shared
//! world, mutates or reads it, and returns. Waiting means stepping the
//! event loop, so a caller that blocks on task completions is the very
//! thing that makes virtual time pass.

use crate::model::{EventRecord, TaskDescription};
use crate::pilot::{PilotDescription, PilotError, PilotPhase, TaskSnapshot, TaskUpdate};
use crate::simcluster::SimWorld;
use std::sync::{Arc, Mutex};

type Watcher = Box<dyn Fn(&TaskUpdate) + Send>;

/// Handle to one pilot inside a shared simulated world.
pub struct SimPilotHandle {
    world: Arc<Mutex<SimWorld>>,
    pilot_id: String,
    watchers: Mutex<Vec<Watcher>>,
}

impl SimPilotHandle {
    /// Submits the pilot's placeholder job into the world.
    pub fn submit(
        world: &Arc<Mutex<SimWorld>>,
        desc: PilotDescription,
    ) -> Result<Self, PilotError> {
        let pilot_id = world.lock().unwrap().submit_pilot(desc)?;
        Ok(SimPilotHandle {
            world: Arc::clone(world),
            pilot_id,
            watchers: Mutex::new(Vec::new()),
        })
    }

    pub fn pilot_id(&self) -> &str {
        &self.pilot_id
    }

    pub fn world(&self) -> Arc<Mutex<SimWorld>> {
        Arc::clone(&self.world)
    }

    pub fn phase(&self) -> PilotPhase {
        self.world
            .lock()
            .unwrap()
            .pilot_phase(&self.pilot_id)
            .expect("pilot registered at submit")
    }

    /// Steps the world until the agent has bootstrapped.
    pub fn wait_ready(&self) -> Result<(), PilotError> {
        let mut world = self.world.lock().unwrap();
        loop {
            match world.pilot_phase(&self.pilot_id).expect("pilot registered") {
                PilotPhase::Pending => {}
                PilotPhase::Ready => return Ok(()),
                PilotPhase::Draining => return Ok(()),
                _ => return Err(PilotError::Terminal),
            }
            world
                .step()
                .map_err(|_| PilotError::Bootstrap("simulation stalled before bootstrap".into()))?;
        }
    }

    /// Registers a completion watcher; invoked for every terminal task
    /// update popped while this handle drives the world. Callbacks must
    /// not block.
    pub fn add_watcher<F: Fn(&TaskUpdate) + Send + 'static>(&self, watcher: F) {
        self.watchers.lock().unwrap().push(Box::new(watcher));
    }

    fn notify(&self, update: &TaskUpdate) {
        for watcher in self.watchers.lock().unwrap().iter() {
            watcher(update);
        }
    }

    pub fn submit_tasks(&self, tasks: Vec<TaskDescription>) -> Result<(), PilotError> {
        self.world
            .lock()
            .unwrap()
            .submit_tasks(&self.pilot_id, tasks)
    }

    pub fn cancel_task(&self, uid: &str) -> Result<bool, PilotError> {
        self.world.lock().unwrap().cancel_task(&self.pilot_id, uid)
    }

    pub fn task(&self, uid: &str) -> Option<TaskSnapshot> {
        self.world.lock().unwrap().task_snapshot(&self.pilot_id, uid)
    }

    pub fn tasks(&self) -> Vec<TaskSnapshot> {
        self.world.lock().unwrap().task_snapshots(&self.pilot_id)
    }

    /// Advances the world until some task of this pilot turns terminal
    /// and returns its update.
    pub fn next_terminal(&self) -> Result<TaskUpdate, PilotError> {
        let mut world = self.world.lock().unwrap();
        loop {
            if let Some(update) = world.pop_task_notification(&self.pilot_id) {
                drop(world);
                self.notify(&update);
                return Ok(update);
            }
            world.step().map_err(|_| {
                PilotError::Submission("simulation stalled with tasks outstanding".into())
            })?;
        }
    }

    /// Runs until every submitted task is terminal.
    pub fn drain(&self) -> Result<Vec<TaskUpdate>, PilotError> {
        let mut updates = Vec::new();
        loop {
            let outstanding = {
                let world = self.world.lock().unwrap();
                world
                    .task_snapshots(&self.pilot_id)
                    .iter()
                    .filter(|t| {
                        use crate::model::StateMachine;
                        !t.state.is_terminal()
                    })
                    .count()
            };
            if outstanding == 0 {
                return Ok(updates);
            }
            updates.push(self.next_terminal()?);
        }
    }

    /// Graceful shutdown with an optional drain deadline in ticks, then
    /// runs the world until the pilot is terminal.
    pub fn shutdown(&self, drain_deadline: Option<u64>) -> Result<PilotPhase, PilotError> {
        let mut world = self.world.lock().unwrap();
        world.shutdown_pilot(&self.pilot_id, drain_deadline)?;
        loop {
            let phase = world
                .pilot_phase(&self.pilot_id)
                .expect("pilot registered");
            if phase.is_terminal() {
                return Ok(phase);
            }
            world
                .step()
                .map_err(|_| PilotError::Submission("simulation stalled during drain".into()))?;
        }
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.world.lock().unwrap().events().to_vec()
    }
}

impl crate::dataflow::TaskExecutor for SimPilotHandle {
    fn submit_task(&mut self, task: TaskDescription) -> Result<(), PilotError> {
        self.submit_tasks(vec![task])
    }

    fn next_terminal(&mut self) -> Result<TaskUpdate, crate::dataflow::ExecutorUnavailable> {
        SimPilotHandle::next_terminal(self)
            .map_err(|e| crate::dataflow::ExecutorUnavailable(e.to_string()))
    }
}
