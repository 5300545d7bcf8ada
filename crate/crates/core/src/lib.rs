//! A miniature workflow-execution stack for HPC-style workloads.
//!
//! The crate is organized around the path a task takes from a workflow
//! description down to hardware (real or simulated):
//!
//! * [`model`] — job/task specifications, resource requests, and the
//!   state machines shared by every other module.
//! * [`lrm`] — the local-resource-manager abstraction: a pluggable
//!   executor interface with a real local-process backend, a simulated
//!   batch backend, and submit-script rendering.
//! * [`simcluster`] — the discrete-event simulated cluster: virtual
//!   clock, batch queue host, and utilization metrics.
//! * [`scheduler`] — a nested scheduler instance that owns a node
//!   subset and performs first-fit placement of tasks onto cores/GPUs.
//! * [`pilot`] — the pilot runtime: acquires an allocation, bootstraps
//!   nested scheduler instances over disjoint node subsets, and
//!   balances tasks across them.
//! * [`dataflow`] — the dataflow engine: task graphs, futures, and the
//!   translator mapping graph nodes onto pilot task descriptions.
//! * [`platform`] — platform configuration files tying a backend, a
//!   cluster shape, and a script dialect together.

pub mod dataflow;
pub mod functions;
pub mod lrm;
pub mod model;
pub mod pilot;
pub mod platform;
pub mod scheduler;
pub mod simcluster;
pub mod workload;
