//! The dependency kernel.
//!
//! [`run`] owns the graph walk: it submits a node only after every
//! dependency reached DONE, keeps submission order among
//! simultaneously-ready nodes in uid order, and resolves one future per
//! node. The executor behind the [`TaskExecutor`] trait supplies the
//! actual execution — a pilot (real or simulated) or the direct
//! in-process executor.

use crate::dataflow::{translate_task, validate_graph, GraphError, TranslationError, WorkflowGraph};
use crate::model::{TaskDescription, TaskPayload, TaskState};
use crate::pilot::{PilotError, TaskUpdate};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// The executor surface the kernel needs: accept one task, report one
/// terminal update. Blocking in `next_terminal` is what drives real
/// time or simulated time forward.
pub trait TaskExecutor {
    fn submit_task(&mut self, task: TaskDescription) -> Result<(), PilotError>;
    fn next_terminal(&mut self) -> Result<TaskUpdate, ExecutorUnavailable>;
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("executor unavailable: {0}")]
pub struct ExecutorUnavailable(pub String);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeStatus {
    /// Ran and exited clean.
    Done,
    /// Ran and failed, or could not be started.
    Failed,
    /// Canceled while queued or executing.
    Canceled,
    /// Never submitted because a dependency did not complete.
    Skipped,
}

impl NodeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeStatus::Done => "DONE",
            NodeStatus::Failed => "FAILED",
            NodeStatus::Canceled => "CANCELED",
            NodeStatus::Skipped => "SKIPPED",
        }
    }
}

/// A resolved future: value on success, error otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeResult {
    pub uid: String,
    pub status: NodeStatus,
    pub exit_code: Option<i32>,
    pub value: Option<String>,
    pub error: Option<String>,
}

impl NodeResult {
    pub fn is_done(&self) -> bool {
        self.status == NodeStatus::Done
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Translation(#[from] TranslationError),
    #[error(transparent)]
    Executor(#[from] ExecutorUnavailable),
    #[error("submission failed: {0}")]
    Submit(PilotError),
}

/// Substitutes `@uid` argument bindings with dependency values.
fn bind_arguments(
    task: &mut TaskDescription,
    deps: &BTreeSet<String>,
    results: &BTreeMap<String, NodeResult>,
) -> Result<(), String> {
    let arguments = match &mut task.payload {
        TaskPayload::Executable { arguments, .. } => arguments,
        TaskPayload::Function { arguments, .. } => arguments,
    };
    for arg in arguments.iter_mut() {
        if let Some(rest) = arg.strip_prefix('@') {
            if let Some(literal) = rest.strip_prefix('@') {
                *arg = format!("@{literal}");
                continue;
            }
            if !deps.contains(rest) {
                return Err(format!("unbound argument reference @{rest}"));
            }
            let value = results
                .get(rest)
                .and_then(|r| r.value.clone())
                .unwrap_or_default();
            *arg = value;
        }
    }
    Ok(())
}

/// Executes the graph and returns one resolved result per node. The
/// map is complete regardless of failures; `run` itself only fails on
/// validation errors or a dead executor.
pub fn run(
    graph: &WorkflowGraph,
    executor: &mut dyn TaskExecutor,
) -> Result<BTreeMap<String, NodeResult>, RunError> {
    validate_graph(graph)?;

    // Translate everything up front: resource errors are validation,
    // not runtime, failures.
    let mut translated: BTreeMap<String, TaskDescription> = BTreeMap::new();
    for node in graph.nodes() {
        translated.insert(node.uid.clone(), translate_task(node)?);
    }

    let deps: BTreeMap<String, BTreeSet<String>> = graph
        .nodes()
        .map(|n| (n.uid.clone(), n.depends_on.iter().cloned().collect()))
        .collect();
    let mut dependents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut indegree: BTreeMap<String, usize> = BTreeMap::new();
    for (uid, dep_set) in &deps {
        indegree.insert(uid.clone(), dep_set.len());
        for dep in dep_set {
            dependents
                .entry(dep.clone())
                .or_default()
                .insert(uid.clone());
        }
    }

    let mut results: BTreeMap<String, NodeResult> = BTreeMap::new();
    let mut submitted: BTreeSet<String> = BTreeSet::new();
    let mut outstanding = 0usize;

    // Errors a node without submitting it and skips its entire subtree.
    fn fail_branch(
        uid: &str,
        status: NodeStatus,
        exit_code: Option<i32>,
        error: String,
        dependents: &BTreeMap<String, BTreeSet<String>>,
        results: &mut BTreeMap<String, NodeResult>,
    ) {
        results.insert(
            uid.to_string(),
            NodeResult {
                uid: uid.to_string(),
                status,
                exit_code,
                value: None,
                error: Some(error),
            },
        );
        let mut queue: VecDeque<&str> = VecDeque::new();
        queue.push_back(uid);
        while let Some(current) = queue.pop_front() {
            if let Some(children) = dependents.get(current) {
                for child in children {
                    if results.contains_key(child) {
                        continue;
                    }
                    results.insert(
                        child.clone(),
                        NodeResult {
                            uid: child.clone(),
                            status: NodeStatus::Skipped,
                            exit_code: None,
                            value: None,
                            error: Some("dependency failed".into()),
                        },
                    );
                    queue.push_back(child);
                }
            }
        }
    }

    // Submission: bind arguments, hand to the executor. Unsatisfiable
    // tasks fail their branch; other submit errors abort the run.
    let mut submit_one = |uid: &str,
                          results: &mut BTreeMap<String, NodeResult>,
                          submitted: &mut BTreeSet<String>,
                          outstanding: &mut usize,
                          executor: &mut dyn TaskExecutor|
     -> Result<(), RunError> {
        let mut task = translated[uid].clone();
        if let Err(reason) = bind_arguments(&mut task, &deps[uid], results) {
            fail_branch(uid, NodeStatus::Failed, None, reason, &dependents, results);
            return Ok(());
        }
        match executor.submit_task(task) {
            Ok(()) => {
                submitted.insert(uid.to_string());
                *outstanding += 1;
                Ok(())
            }
            Err(PilotError::Unsatisfiable { .. }) => {
                fail_branch(
                    uid,
                    NodeStatus::Failed,
                    None,
                    "unsatisfiable resource request".into(),
                    &dependents,
                    results,
                );
                Ok(())
            }
            Err(other) => Err(RunError::Submit(other)),
        }
    };

    let initial: Vec<String> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(uid, _)| uid.clone())
        .collect();
    for uid in initial {
        if !results.contains_key(&uid) {
            submit_one(&uid, &mut results, &mut submitted, &mut outstanding, executor)?;
        }
    }

    while results.len() < graph.len() {
        if outstanding == 0 {
            return Err(RunError::Executor(ExecutorUnavailable(
                "no tasks in flight but nodes unresolved".into(),
            )));
        }
        let update = executor.next_terminal()?;
        if !submitted.contains(&update.uid) || results.contains_key(&update.uid) {
            continue;
        }
        outstanding -= 1;
        match update.state {
            TaskState::Done => {
                results.insert(
                    update.uid.clone(),
                    NodeResult {
                        uid: update.uid.clone(),
                        status: NodeStatus::Done,
                        exit_code: update.exit_code,
                        value: Some(update.result.clone().unwrap_or_default()),
                        error: None,
                    },
                );
                if let Some(children) = dependents.get(&update.uid) {
                    let mut ready = Vec::new();
                    for child in children {
                        let d = indegree.get_mut(child).expect("child indexed");
                        *d -= 1;
                        if *d == 0 && !results.contains_key(child) {
                            ready.push(child.clone());
                        }
                    }
                    for uid in ready {
                        submit_one(&uid, &mut results, &mut submitted, &mut outstanding, executor)?;
                    }
                }
            }
            TaskState::Failed => {
                let error = update
                    .detail
                    .get("error")
                    .cloned()
                    .unwrap_or_else(|| format!("exit code {}", update.exit_code.unwrap_or(-1)));
                fail_branch(
                    &update.uid,
                    NodeStatus::Failed,
                    update.exit_code,
                    error,
                    &dependents,
                    &mut results,
                );
            }
            TaskState::Canceled => {
                fail_branch(
                    &update.uid,
                    NodeStatus::Canceled,
                    None,
                    "canceled".into(),
                    &dependents,
                    &mut results,
                );
            }
            other => {
                debug_assert!(false, "non-terminal update {other} delivered");
            }
        }
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{DataflowNode, DirectExecutor};
    use crate::functions::FunctionRegistry;
    use std::sync::Arc;

    fn direct() -> DirectExecutor {
        DirectExecutor::new(Arc::new(FunctionRegistry::with_builtins()))
    }

    #[test]
    fn diamond_produces_all_results() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("a", "echo", &["seed"]),
            DataflowNode::function("b", "concat", &["@a", "-left"]).after(&["a"]),
            DataflowNode::function("c", "concat", &["@a", "-right"]).after(&["a"]),
            DataflowNode::function("d", "concat", &["@b", "+", "@c"]).after(&["b", "c"]),
        ])
        .unwrap();
        let mut exec = direct();
        let results = run(&graph, &mut exec).unwrap();
        assert_eq!(results.len(), 4);
        assert!(results.values().all(NodeResult::is_done));
        assert_eq!(
            results["d"].value.as_deref(),
            Some("seed-left+seed-right")
        );
    }

    #[test]
    fn failed_branch_skips_dependents_but_not_siblings() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("b", "fail", &["boom"]),
            DataflowNode::function("c", "echo", &["never"]).after(&["b"]),
            DataflowNode::function("d", "echo", &["transitively-never"]).after(&["c"]),
            DataflowNode::function("e", "echo", &["independent"]),
        ])
        .unwrap();
        let mut exec = direct();
        let results = run(&graph, &mut exec).unwrap();
        assert_eq!(results.len(), 4);
        assert_eq!(results["b"].status, NodeStatus::Failed);
        assert_eq!(results["b"].error.as_deref(), Some("boom"));
        assert_eq!(results["c"].status, NodeStatus::Skipped);
        assert_eq!(results["c"].error.as_deref(), Some("dependency failed"));
        assert_eq!(results["d"].status, NodeStatus::Skipped);
        assert_eq!(results["e"].status, NodeStatus::Done);
        assert_eq!(results["e"].value.as_deref(), Some("independent"));
    }

    #[test]
    fn unbound_reference_fails_only_that_branch() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("a", "echo", &["x"]),
            // References a node that is not among its dependencies.
            DataflowNode::function("b", "echo", &["@a"]),
            DataflowNode::function("c", "echo", &["@b"]).after(&["b"]),
        ])
        .unwrap();
        let mut exec = direct();
        let results = run(&graph, &mut exec).unwrap();
        assert_eq!(results["a"].status, NodeStatus::Done);
        assert_eq!(results["b"].status, NodeStatus::Failed);
        assert!(results["b"].error.as_deref().unwrap().contains("unbound"));
        assert_eq!(results["c"].status, NodeStatus::Skipped);
    }

    #[test]
    fn escaped_at_passes_through() {
        let graph =
            WorkflowGraph::new([DataflowNode::function("a", "echo", &["@@literal"])]).unwrap();
        let mut exec = direct();
        let results = run(&graph, &mut exec).unwrap();
        assert_eq!(results["a"].value.as_deref(), Some("@literal"));
    }

    #[test]
    fn invalid_resources_abort_before_execution() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("a", "echo", &["x"]).with_resources(-1, 1, 0)
        ])
        .unwrap();
        let mut exec = direct();
        assert!(matches!(
            run(&graph, &mut exec).unwrap_err(),
            RunError::Translation(_)
        ));
    }

    #[test]
    fn cyclic_graph_rejected() {
        let graph = WorkflowGraph::new([
            DataflowNode::function("a", "echo", &[]).after(&["b"]),
            DataflowNode::function("b", "echo", &[]).after(&["a"]),
        ])
        .unwrap();
        let mut exec = direct();
        assert!(matches!(run(&graph, &mut exec).unwrap_err(), RunError::Graph(_)));
    }

    #[test]
    fn empty_graph_returns_empty_map() {
        let graph = WorkflowGraph::new([]).unwrap();
        let mut exec = direct();
        assert!(run(&graph, &mut exec).unwrap().is_empty());
    }
}
