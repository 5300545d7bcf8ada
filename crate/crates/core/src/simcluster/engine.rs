//! Virtual clock and the pending-event queue.
//!
//! The clock only ever jumps to the next scheduled event time. Events
//! at the same tick fire in a fixed order — subject id lexicographic,
//! then scheduling sequence number — so runs are reproducible down to
//! the byte.

use crate::model::Time;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Monotone virtual clock, in integer ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    now: Time,
}

impl SimClock {
    pub fn new() -> Self {
        SimClock { now: 0 }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    fn jump_to(&mut self, tick: Time) {
        debug_assert!(tick >= self.now, "clock may not move backwards");
        self.now = tick;
    }
}

/// A scheduled occurrence carrying an arbitrary payload.
#[derive(Clone, Debug)]
pub struct ScheduledEvent<E> {
    pub tick: Time,
    pub subject_id: String,
    pub seq: u64,
    pub payload: E,
}

impl<E> ScheduledEvent<E> {
    fn key(&self) -> (Time, &str, u64) {
        (self.tick, &self.subject_id, self.seq)
    }
}

// Heap entries order by (tick, subject_id, seq); BinaryHeap is a
// max-heap so comparisons are reversed.
struct HeapEntry<E>(ScheduledEvent<E>);

impl<E> PartialEq for HeapEntry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.0.key() == other.0.key()
    }
}

impl<E> Eq for HeapEntry<E> {}

impl<E> PartialOrd for HeapEntry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for HeapEntry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.key().cmp(&self.0.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("no pending events")]
pub struct EmptySchedule;

/// Pending event set with deterministic firing order.
pub struct EventQueue<E> {
    heap: BinaryHeap<HeapEntry<E>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    /// Tick of the earliest pending event.
    pub fn next_tick(&self) -> Option<Time> {
        self.heap.peek().map(|e| e.0.tick)
    }

    pub fn schedule(&mut self, tick: Time, subject_id: impl Into<String>, payload: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapEntry(ScheduledEvent {
            tick,
            subject_id: subject_id.into(),
            seq,
            payload,
        }));
        seq
    }

    /// Jumps the clock to the minimum pending timestamp and returns all
    /// events at that timestamp, ordered by (subject_id, seq). Events
    /// scheduled *while handling* this batch land in later batches,
    /// at the unchanged clock when they share the tick.
    pub fn advance(&mut self, clock: &mut SimClock) -> Result<Vec<ScheduledEvent<E>>, EmptySchedule> {
        let first = self.heap.pop().ok_or(EmptySchedule)?;
        let tick = first.0.tick;
        clock.jump_to(tick);
        let mut fired = vec![first.0];
        while let Some(entry) = self.heap.peek() {
            if entry.0.tick != tick {
                break;
            }
            fired.push(self.heap.pop().expect("peeked entry exists").0);
        }
        Ok(fired)
    }
}
