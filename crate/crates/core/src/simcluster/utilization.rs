//! Resource-utilization metrics derived from event logs.
//!
//! Busy resources are whatever EXECUTING task placements hold at an
//! instant. The series samples at every state-change event rather than
//! on a fixed grid, so the time integral is exact and the aggregate is
//! free of aliasing.

use crate::model::{EventRecord, StateMachine, StateValue, TaskState, Time};
use crate::simcluster::ClusterConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Busy counters at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UtilizationSample {
    pub tick: Time,
    pub busy_cores: u64,
    pub busy_gpus: u64,
}

/// Sampled busy-resource series over a window, plus exact integrals.
#[derive(Clone, Debug)]
pub struct UtilizationSeries {
    pub samples: Vec<UtilizationSample>,
    pub total_cores: u64,
    pub total_gpus: u64,
    pub window: (Time, Time),
    pub core_ticks: u128,
    pub gpu_ticks: u128,
}

impl UtilizationSeries {
    /// Time-integral of busy cores over total core-time in the window.
    pub fn aggregate_cores(&self) -> f64 {
        let (t0, t1) = self.window;
        let denom = self.total_cores as u128 * (t1 - t0) as u128;
        if denom == 0 {
            return 0.0;
        }
        self.core_ticks as f64 / denom as f64
    }

    /// As [`UtilizationSeries::aggregate_cores`] for GPUs; `None` when
    /// the cluster has no GPUs.
    pub fn aggregate_gpus(&self) -> Option<f64> {
        let (t0, t1) = self.window;
        let denom = self.total_gpus as u128 * (t1 - t0) as u128;
        if denom == 0 {
            return None;
        }
        Some(self.gpu_ticks as f64 / denom as f64)
    }

    /// Comma-separated export, one sample per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tick,busy_cores,busy_gpus,total_cores,total_gpus\n");
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.tick, s.busy_cores, s.busy_gpus, self.total_cores, self.total_gpus
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum UtilizationError {
    #[error("window start must precede window end")]
    BadWindow,
    #[error("malformed event for {subject}: {reason}")]
    MalformedEvent { subject: String, reason: String },
}

/// Computes busy-core/GPU occupancy over `window` from an event log.
///
/// EXECUTING transitions must carry an `assignments` detail naming the
/// held resources; terminal transitions release them. Job events and
/// task events without resource claims pass through untouched.
pub fn compute_utilization(
    events: &[EventRecord],
    config: &ClusterConfig,
    window: (Time, Time),
) -> Result<UtilizationSeries, UtilizationError> {
    let (t0, t1) = window;
    if t0 >= t1 {
        return Err(UtilizationError::BadWindow);
    }

    // (cores, gpus) deltas per tick, in tick order.
    let mut deltas: BTreeMap<Time, (i64, i64)> = BTreeMap::new();
    let mut held: BTreeMap<&str, (u64, u64)> = BTreeMap::new();

    let mut ordered: Vec<&EventRecord> = events.iter().collect();
    ordered.sort_by_key(|e| e.timestamp);

    for event in ordered {
        let StateValue::Task(new_state) = event.new_state else {
            continue;
        };
        if new_state == TaskState::Executing {
            let assignments = event.detail.get("assignments").ok_or_else(|| {
                UtilizationError::MalformedEvent {
                    subject: event.subject_id.clone(),
                    reason: "EXECUTING without assignments detail".into(),
                }
            })?;
            let placement =
                crate::scheduler::Placement::parse_detail(&event.subject_id, assignments).map_err(
                    |reason| UtilizationError::MalformedEvent {
                        subject: event.subject_id.clone(),
                        reason,
                    },
                )?;
            let cores: u64 = placement.assignments.iter().map(|a| a.cores as u64).sum();
            let gpus: u64 = placement.assignments.iter().map(|a| a.gpus as u64).sum();
            held.insert(&event.subject_id, (cores, gpus));
            let d = deltas.entry(event.timestamp).or_insert((0, 0));
            d.0 += cores as i64;
            d.1 += gpus as i64;
        } else if new_state.is_terminal() {
            if let Some((cores, gpus)) = held.remove(event.subject_id.as_str()) {
                let d = deltas.entry(event.timestamp).or_insert((0, 0));
                d.0 -= cores as i64;
                d.1 -= gpus as i64;
            }
        }
    }

    let mut samples = Vec::new();
    let mut core_ticks: u128 = 0;
    let mut gpu_ticks: u128 = 0;
    let mut busy_cores: i64 = 0;
    let mut busy_gpus: i64 = 0;
    let mut cursor = t0;

    let deltas: Vec<(Time, (i64, i64))> = deltas.into_iter().collect();
    let mut idx = 0;

    // Level at t0 includes everything that started at or before it.
    while idx < deltas.len() && deltas[idx].0 <= t0 {
        busy_cores += deltas[idx].1 .0;
        busy_gpus += deltas[idx].1 .1;
        idx += 1;
    }
    samples.push(UtilizationSample {
        tick: t0,
        busy_cores: busy_cores.max(0) as u64,
        busy_gpus: busy_gpus.max(0) as u64,
    });

    while idx < deltas.len() && deltas[idx].0 < t1 {
        let (tick, (dc, dg)) = deltas[idx];
        core_ticks += busy_cores.max(0) as u128 * (tick - cursor) as u128;
        gpu_ticks += busy_gpus.max(0) as u128 * (tick - cursor) as u128;
        cursor = tick;
        busy_cores += dc;
        busy_gpus += dg;
        samples.push(UtilizationSample {
            tick,
            busy_cores: busy_cores.max(0) as u64,
            busy_gpus: busy_gpus.max(0) as u64,
        });
        idx += 1;
    }
    core_ticks += busy_cores.max(0) as u128 * (t1 - cursor) as u128;
    gpu_ticks += busy_gpus.max(0) as u128 * (t1 - cursor) as u128;

    Ok(UtilizationSeries {
        samples,
        total_cores: config.total_cores(),
        total_gpus: config.total_gpus(),
        window,
        core_ticks,
        gpu_ticks,
    })
}
