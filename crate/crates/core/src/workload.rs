//! Seeded workload generators for simulation experiments.
//!
//! One explicit seed governs every stochastic choice, so a workload is
//! a pure function of its parameters. Task uids are zero-padded to keep
//! lexicographic and submission order aligned.

use crate::model::TaskDescription;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Homogeneous bag: `count` tasks of the same shape and duration.
pub fn uniform_bag(
    count: usize,
    cores_per_rank: u32,
    gpus_per_rank: u32,
    duration_ticks: u64,
    prefix: &str,
) -> Vec<TaskDescription> {
    (0..count)
        .map(|i| {
            TaskDescription::executable(format!("{prefix}-{i:07}"), "task")
                .with_shape(1, cores_per_rank, gpus_per_rank)
                .with_duration(duration_ticks)
        })
        .collect()
}

/// Bounds for [`random_heterogeneous`] task shapes.
#[derive(Clone, Copy, Debug)]
pub struct ShapeBounds {
    pub max_ranks: u32,
    pub max_cores_per_rank: u32,
    pub max_gpus_per_rank: u32,
    pub max_duration_ticks: u64,
}

/// Heterogeneous bag drawn from a seeded generator: ranks, cores, GPUs
/// and durations vary per task within the given bounds.
pub fn random_heterogeneous(
    seed: u64,
    count: usize,
    bounds: ShapeBounds,
    prefix: &str,
) -> Vec<TaskDescription> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let ranks = rng.gen_range(1..=bounds.max_ranks);
            let cores = rng.gen_range(1..=bounds.max_cores_per_rank);
            let gpus = rng.gen_range(0..=bounds.max_gpus_per_rank);
            let duration = rng.gen_range(1..=bounds.max_duration_ticks);
            TaskDescription::executable(format!("{prefix}-{i:07}"), "task")
                .with_shape(ranks, cores, gpus)
                .with_duration(duration)
        })
        .collect()
}
