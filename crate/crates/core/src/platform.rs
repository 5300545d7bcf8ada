//! Target platform configuration.
//!
//! A platform file names the backend, the simulated cluster shape when
//! the backend is simulated, the script dialect, and how many cores per
//! node are reserved for system processes. Reserved cores are removed
//! from what the scheduler may place on *and* from the utilization
//! denominator.

use crate::lrm::ExecutorRegistry;
use crate::model::ValidationError;
use crate::simcluster::ClusterConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub name: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterConfig>,
    #[serde(default = "default_dialect")]
    pub dialect: String,
    #[serde(default)]
    pub reserved_cores_per_node: u32,
}

fn default_dialect() -> String {
    "slurm-like".to_string()
}

impl PlatformConfig {
    pub fn local(name: impl Into<String>) -> Self {
        PlatformConfig {
            name: name.into(),
            backend: "local".into(),
            cluster: None,
            dialect: default_dialect(),
            reserved_cores_per_node: 0,
        }
    }

    pub fn simulated(name: impl Into<String>, cluster: ClusterConfig) -> Self {
        PlatformConfig {
            name: name.into(),
            backend: "sim-batch".into(),
            cluster: Some(cluster),
            dialect: default_dialect(),
            reserved_cores_per_node: 0,
        }
    }

    pub fn is_simulated(&self) -> bool {
        self.backend == "sim-batch"
    }

    pub fn validate(&self, registry: &ExecutorRegistry) -> Result<(), ValidationError> {
        if registry.get(&self.backend).is_none() {
            return Err(ValidationError::single(
                "backend",
                format!(
                    "unknown backend {:?}; registered: {}",
                    self.backend,
                    registry.names().join(", ")
                ),
            ));
        }
        match (&self.cluster, self.is_simulated()) {
            (None, true) => {
                return Err(ValidationError::single(
                    "cluster",
                    "sim-batch platforms need a cluster section",
                ))
            }
            (Some(cluster), _) => {
                cluster.validate()?;
                if self.reserved_cores_per_node >= cluster.cores_per_node {
                    return Err(ValidationError::single(
                        "reserved_cores_per_node",
                        "must be smaller than cores_per_node",
                    ));
                }
            }
            (None, false) => {}
        }
        Ok(())
    }

    /// The schedulable cluster: reserved cores removed from every node.
    /// This is both what pilots may place on and the denominator for
    /// utilization metrics.
    pub fn effective_cluster(&self) -> Option<ClusterConfig> {
        self.cluster.as_ref().map(|c| ClusterConfig {
            name: c.name.clone(),
            node_count: c.node_count,
            cores_per_node: c.cores_per_node - self.reserved_cores_per_node,
            gpus_per_node: c.gpus_per_node,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("platform config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_cores_shrink_effective_cluster() {
        let mut platform = PlatformConfig::simulated(
            "frontier-mini",
            ClusterConfig::new("frontier-mini", 512, 56, 8),
        );
        platform.reserved_cores_per_node = 8;
        let registry = ExecutorRegistry::with_builtins();
        platform.validate(&registry).unwrap();
        let effective = platform.effective_cluster().unwrap();
        assert_eq!(effective.cores_per_node, 48);
        assert_eq!(effective.total_cores(), 512 * 48);
        assert_eq!(effective.gpus_per_node, 8);
    }

    #[test]
    fn reserved_cores_must_leave_capacity() {
        let mut platform =
            PlatformConfig::simulated("tiny", ClusterConfig::new("tiny", 2, 4, 0));
        platform.reserved_cores_per_node = 4;
        let registry = ExecutorRegistry::with_builtins();
        assert!(platform.validate(&registry).is_err());
    }

    #[test]
    fn unknown_backend_rejected() {
        let mut platform = PlatformConfig::local("weird");
        platform.backend = "quantum".into();
        let registry = ExecutorRegistry::with_builtins();
        let err = platform.validate(&registry).unwrap_err();
        assert!(err.to_string().contains("quantum"));
    }

    #[test]
    fn sim_platform_requires_cluster() {
        let platform = PlatformConfig {
            name: "x".into(),
            backend: "sim-batch".into(),
            cluster: None,
            dialect: "slurm-like".into(),
            reserved_cores_per_node: 0,
        };
        let registry = ExecutorRegistry::with_builtins();
        assert!(platform.validate(&registry).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let platform = PlatformConfig::simulated(
            "sim-256",
            ClusterConfig::new("sim-256", 256, 56, 0),
        );
        let text = platform.to_toml();
        assert_eq!(PlatformConfig::from_toml(&text).unwrap(), platform);
    }
}
