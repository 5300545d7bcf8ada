//! Dataflow engine: task graphs, futures, and execution.
//!
//! A workflow is a DAG of [`DataflowNode`]s. The kernel in [`run`]
//! releases a node only after all its dependencies completed, translates
//! it into a pilot task description, and resolves its future with the
//! task's result or error. Failures stay on their branch: dependents of
//! a failed node are errored without being submitted, siblings proceed.

mod direct;
mod run;
mod translate;

pub use direct::DirectExecutor;
pub use run::{run, ExecutorUnavailable, NodeResult, NodeStatus, RunError, TaskExecutor};
pub use translate::{resource_map, translate_task, TranslationError, RESOURCE_KEYS};

use crate::model::TaskPayload;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// One workflow-graph vertex. The future result slot lives in the
/// kernel, not here: nodes are immutable descriptions.
///
/// Arguments may bind to dependency results: `@uid` is replaced by the
/// value of the named dependency at submission time (`@@` escapes a
/// literal leading `@`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowNode {
    pub uid: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource_specification: Option<BTreeMap<String, i64>>,
    /// Simulated run length in ticks; ignored by real backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_duration_s: Option<u64>,
    #[serde(flatten)]
    pub payload: TaskPayload,
}

impl DataflowNode {
    pub fn executable(uid: impl Into<String>, executable: impl Into<String>, args: &[&str]) -> Self {
        DataflowNode {
            uid: uid.into(),
            depends_on: Vec::new(),
            resource_specification: None,
            expected_duration_s: None,
            payload: TaskPayload::Executable {
                executable: executable.into(),
                arguments: args.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn function(uid: impl Into<String>, function: impl Into<String>, args: &[&str]) -> Self {
        DataflowNode {
            uid: uid.into(),
            depends_on: Vec::new(),
            resource_specification: None,
            expected_duration_s: None,
            payload: TaskPayload::Function {
                function: function.into(),
                arguments: args.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn after(mut self, deps: &[&str]) -> Self {
        self.depends_on = deps.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_resources(mut self, ranks: i64, cores_per_rank: i64, gpus_per_rank: i64) -> Self {
        let mut map = BTreeMap::new();
        map.insert("ranks".to_string(), ranks);
        map.insert("cores_per_rank".to_string(), cores_per_rank);
        map.insert("gpus_per_rank".to_string(), gpus_per_rank);
        self.resource_specification = Some(map);
        self
    }

    pub fn with_duration(mut self, ticks: u64) -> Self {
        self.expected_duration_s = Some(ticks);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node uid {0}")]
    DuplicateUid(String),
    #[error("dependency cycle: {}", witness.join(" -> "))]
    CyclicDependency { witness: Vec<String> },
    #[error("node {node} depends on missing node {missing}")]
    DanglingReference { node: String, missing: String },
}

/// Reading a workflow file can fail before the graph is even built.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorkflowFileError {
    #[error("workflow parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A uid-keyed node set; edges are implied by `depends_on`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkflowGraph {
    nodes: BTreeMap<String, DataflowNode>,
}

impl WorkflowGraph {
    pub fn new(nodes: impl IntoIterator<Item = DataflowNode>) -> Result<Self, GraphError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if map.contains_key(&node.uid) {
                return Err(GraphError::DuplicateUid(node.uid));
            }
            map.insert(node.uid.clone(), node);
        }
        Ok(WorkflowGraph { nodes: map })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, uid: &str) -> Option<&DataflowNode> {
        self.nodes.get(uid)
    }

    /// Nodes in uid order.
    pub fn nodes(&self) -> impl Iterator<Item = &DataflowNode> {
        self.nodes.values()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes
            .values()
            .map(|n| n.depends_on.iter().collect::<BTreeSet<_>>().len())
            .sum()
    }

    /// Workflow file form: a list of node documents.
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            node: Vec<&'a DataflowNode>,
        }
        toml::to_string(&File {
            node: self.nodes.values().collect(),
        })
        .expect("workflow graph serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, WorkflowFileError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            node: Vec<DataflowNode>,
        }
        let file: File =
            toml::from_str(text).map_err(|e| WorkflowFileError::Parse(e.to_string()))?;
        WorkflowGraph::new(file.node).map_err(WorkflowFileError::Graph)
    }
}

/// Checks acyclicity and that every dependency names an existing node.
/// A cycle is reported with one witness path that starts and ends on
/// the same uid.
pub fn validate_graph(graph: &WorkflowGraph) -> Result<(), GraphError> {
    for node in graph.nodes.values() {
        for dep in &node.depends_on {
            if !graph.nodes.contains_key(dep) {
                return Err(GraphError::DanglingReference {
                    node: node.uid.clone(),
                    missing: dep.clone(),
                });
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color: BTreeMap<&str, Color> =
        graph.nodes.keys().map(|k| (k.as_str(), Color::White)).collect();
    let mut stack: Vec<&str> = Vec::new();

    fn visit<'a>(
        uid: &'a str,
        graph: &'a WorkflowGraph,
        color: &mut BTreeMap<&'a str, Color>,
        stack: &mut Vec<&'a str>,
    ) -> Result<(), GraphError> {
        color.insert(uid, Color::Gray);
        stack.push(uid);
        let node = &graph.nodes[uid];
        for dep in &node.depends_on {
            match color[dep.as_str()] {
                Color::White => visit(dep, graph, color, stack)?,
                Color::Gray => {
                    let start = stack.iter().position(|u| *u == dep).expect("gray on stack");
                    let mut witness: Vec<String> =
                        stack[start..].iter().map(|s| s.to_string()).collect();
                    witness.push(dep.clone());
                    return Err(GraphError::CyclicDependency { witness });
                }
                Color::Black => {}
            }
        }
        stack.pop();
        color.insert(uid, Color::Black);
        Ok(())
    }

    let uids: Vec<&str> = graph.nodes.keys().map(String::as_str).collect();
    for uid in uids {
        if color[uid] == Color::White {
            visit(uid, graph, &mut color, &mut stack)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_is_valid() {
        let graph = WorkflowGraph::new([
            DataflowNode::executable("a", "/bin/true", &[]),
            DataflowNode::executable("b", "/bin/true", &[]).after(&["a"]),
            DataflowNode::executable("c", "/bin/true", &[]).after(&["b"]),
        ])
        .unwrap();
        assert!(validate_graph(&graph).is_ok());
        assert_eq!(graph.len(), 3);
        assert_eq!(graph.edge_count(), 2);
    }

    #[test]
    fn two_cycle_reports_witness() {
        let graph = WorkflowGraph::new([
            DataflowNode::executable("a", "/bin/true", &[]).after(&["b"]),
            DataflowNode::executable("b", "/bin/true", &[]).after(&["a"]),
        ])
        .unwrap();
        let err = validate_graph(&graph).unwrap_err();
        match err {
            GraphError::CyclicDependency { witness } => {
                assert_eq!(witness.len(), 3);
                assert_eq!(witness.first(), witness.last());
                assert_eq!(witness, vec!["a", "b", "a"]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dangling_reference_named() {
        let graph = WorkflowGraph::new([
            DataflowNode::executable("b", "/bin/true", &[]).after(&["ghost"])
        ])
        .unwrap();
        assert_eq!(
            validate_graph(&graph).unwrap_err(),
            GraphError::DanglingReference {
                node: "b".into(),
                missing: "ghost".into()
            }
        );
    }

    #[test]
    fn duplicate_uid_rejected() {
        let err = WorkflowGraph::new([
            DataflowNode::executable("a", "/bin/true", &[]),
            DataflowNode::executable("a", "/bin/false", &[]),
        ])
        .unwrap_err();
        assert_eq!(err, GraphError::DuplicateUid("a".into()));
    }

    #[test]
    fn workflow_file_round_trips() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("sum", "add", &["1", "2"]).with_resources(1, 1, 0),
            DataflowNode::executable("use", "/bin/echo", &["@sum"])
                .after(&["sum"])
                .with_duration(5),
        ])
        .unwrap();
        let text = graph.to_toml();
        let back = WorkflowGraph::from_toml(&text).unwrap();
        assert_eq!(back, graph);
        assert!(text.contains("[[node]]"), "got: {text}");
    }

    #[test]
    fn self_cycle_detected() {
        let graph =
            WorkflowGraph::new([DataflowNode::executable("a", "/bin/true", &[]).after(&["a"])])
                .unwrap();
        let err = validate_graph(&graph).unwrap_err();
        assert!(matches!(err, GraphError::CyclicDependency { .. }));
    }
}
