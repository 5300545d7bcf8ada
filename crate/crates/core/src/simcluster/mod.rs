//! Discrete-event simulated HPC cluster.
//!
//! [`engine`] provides the virtual clock and pending-event queue,
//! [`world`] the cluster state, batch queue host, and pilot agents,
//! [`utilization`] the busy-resource metrics derived from event logs.
//! The simulation is single-threaded by contract: one event loop owns
//! the clock and all state.

pub mod engine;
pub mod utilization;
pub mod world;

pub use engine::{EmptySchedule, EventQueue, ScheduledEvent, SimClock};
pub use utilization::{compute_utilization, UtilizationError, UtilizationSample, UtilizationSeries};
pub use world::SimWorld;

use crate::model::ValidationError;
use serde::{Deserialize, Serialize};

/// Shape of a simulated cluster: homogeneous nodes, fixed for a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub name: String,
    pub node_count: u32,
    pub cores_per_node: u32,
    #[serde(default)]
    pub gpus_per_node: u32,
}

impl ClusterConfig {
    pub fn new(name: impl Into<String>, node_count: u32, cores_per_node: u32, gpus_per_node: u32) -> Self {
        ClusterConfig {
            name: name.into(),
            node_count,
            cores_per_node,
            gpus_per_node,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.node_count < 1 {
            return Err(ValidationError::single("node_count", "must be >= 1"));
        }
        if self.cores_per_node < 1 {
            return Err(ValidationError::single("cores_per_node", "must be >= 1"));
        }
        Ok(())
    }

    pub fn node_id(&self, index: u32) -> String {
        format!("n{index:04}")
    }

    pub fn total_cores(&self) -> u64 {
        self.node_count as u64 * self.cores_per_node as u64
    }

    pub fn total_gpus(&self) -> u64 {
        self.node_count as u64 * self.gpus_per_node as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_multiply_out() {
        let cfg = ClusterConfig::new("frontier-mini", 256, 56, 8);
        assert_eq!(cfg.total_cores(), 256 * 56);
        assert_eq!(cfg.total_gpus(), 256 * 8);
        assert!(cfg.validate().is_ok());
        assert!(ClusterConfig::new("empty", 0, 1, 0).validate().is_err());
    }
}
