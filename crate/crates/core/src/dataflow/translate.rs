//! Mapping workflow nodes onto pilot task descriptions.
//!
//! The canonical resource keys are `ranks`, `cores_per_rank`, and
//! `gpus_per_rank`, mapped one-to-one onto task fields. Unknown keys
//! are errors rather than being ignored: silently dropping an attribute
//! a user spelled differently would misplace their task.

use crate::dataflow::DataflowNode;
use crate::model::TaskDescription;
use std::collections::BTreeMap;
use thiserror::Error;

/// The canonical resource-specification key set.
pub const RESOURCE_KEYS: [&str; 3] = ["ranks", "cores_per_rank", "gpus_per_rank"];

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TranslationError {
    #[error("node {uid}: unknown resource key {key:?}")]
    UnknownKey { uid: String, key: String },
    #[error("node {uid}: {key} must be >= 1, got {value}")]
    NotPositive { uid: String, key: String, value: i64 },
    #[error("node {uid}: {key} must be >= 0, got {value}")]
    Negative { uid: String, key: String, value: i64 },
}

/// Translates one node into a task description. The payload and uid
/// are copied verbatim; absent resource keys default to one rank on
/// one core with no GPUs. The mapping is lossless: reading the
/// description back with [`resource_map`] returns every specified key
/// unchanged.
pub fn translate_task(node: &DataflowNode) -> Result<TaskDescription, TranslationError> {
    let mut ranks: u32 = 1;
    let mut cores_per_rank: u32 = 1;
    let mut gpus_per_rank: u32 = 0;

    if let Some(spec) = &node.resource_specification {
        for (key, &value) in spec {
            match key.as_str() {
                "ranks" => {
                    if value < 1 {
                        return Err(TranslationError::NotPositive {
                            uid: node.uid.clone(),
                            key: key.clone(),
                            value,
                        });
                    }
                    ranks = value as u32;
                }
                "cores_per_rank" => {
                    if value < 1 {
                        return Err(TranslationError::NotPositive {
                            uid: node.uid.clone(),
                            key: key.clone(),
                            value,
                        });
                    }
                    cores_per_rank = value as u32;
                }
                "gpus_per_rank" => {
                    if value < 0 {
                        return Err(TranslationError::Negative {
                            uid: node.uid.clone(),
                            key: key.clone(),
                            value,
                        });
                    }
                    gpus_per_rank = value as u32;
                }
                other => {
                    return Err(TranslationError::UnknownKey {
                        uid: node.uid.clone(),
                        key: other.to_string(),
                    })
                }
            }
        }
    }

    Ok(TaskDescription {
        uid: node.uid.clone(),
        ranks,
        cores_per_rank,
        gpus_per_rank,
        expected_duration_s: node.expected_duration_s,
        payload: node.payload.clone(),
    })
}

/// Reads a task description back into a resource-specification map;
/// the inverse of [`translate_task`] over the canonical keys.
pub fn resource_map(task: &TaskDescription) -> BTreeMap<String, i64> {
    let mut map = BTreeMap::new();
    map.insert("ranks".to_string(), task.ranks as i64);
    map.insert("cores_per_rank".to_string(), task.cores_per_rank as i64);
    map.insert("gpus_per_rank".to_string(), task.gpus_per_rank as i64);
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specified_keys_map_one_to_one() {
        let node = DataflowNode::executable("t", "/bin/app", &[]).with_resources(4, 2, 1);
        let task = translate_task(&node).unwrap();
        assert_eq!(
            (task.ranks, task.cores_per_rank, task.gpus_per_rank),
            (4, 2, 1)
        );
        assert_eq!(task.uid, "t");
    }

    #[test]
    fn absent_specification_defaults() {
        let node = DataflowNode::executable("t", "/bin/app", &[]);
        let task = translate_task(&node).unwrap();
        assert_eq!(
            (task.ranks, task.cores_per_rank, task.gpus_per_rank),
            (1, 1, 0)
        );
    }

    #[test]
    fn negative_cores_rejected() {
        let mut node = DataflowNode::executable("t", "/bin/app", &[]);
        let mut spec = BTreeMap::new();
        spec.insert("cores_per_rank".to_string(), -2);
        node.resource_specification = Some(spec);
        let err = translate_task(&node).unwrap_err();
        assert_eq!(
            err,
            TranslationError::NotPositive {
                uid: "t".into(),
                key: "cores_per_rank".into(),
                value: -2
            }
        );
    }

    #[test]
    fn zero_ranks_rejected() {
        let node = DataflowNode::executable("t", "/bin/app", &[]).with_resources(0, 1, 0);
        assert!(matches!(
            translate_task(&node).unwrap_err(),
            TranslationError::NotPositive { .. }
        ));
    }

    #[test]
    fn unknown_key_is_an_error_not_ignored() {
        let mut node = DataflowNode::executable("t", "/bin/app", &[]);
        let mut spec = BTreeMap::new();
        spec.insert("num_nodes".to_string(), 2);
        node.resource_specification = Some(spec);
        assert_eq!(
            translate_task(&node).unwrap_err(),
            TranslationError::UnknownKey {
                uid: "t".into(),
                key: "num_nodes".into()
            }
        );
    }

    #[test]
    fn round_trip_preserves_specified_keys() {
        let node = DataflowNode::function("t", "echo", &[]).with_resources(3, 5, 2);
        let task = translate_task(&node).unwrap();
        let back = resource_map(&task);
        assert_eq!(back, node.resource_specification.unwrap());
    }
}
