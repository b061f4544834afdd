use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::domain::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("event scheduled at {fire_at} ms but the clock is already at {now} ms")]
    PastEvent { fire_at: SimTime, now: SimTime },
}

/// A scheduled item. Ordering is `(fire_at, seq)`, ascending.
#[derive(Debug, Clone)]
pub struct Scheduled<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest pops first.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Future event set plus the simulation clock.
///
/// `seq` is a global counter assigned at scheduling time, so events with the
/// same timestamp fire in the order they were scheduled.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    now: SimTime,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `event` at `fire_at` and returns its sequence number.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<u64, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::PastEvent {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled {
            fire_at,
            seq,
            event,
        });
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: u64, event: E) -> u64 {
        let at = self.now + delay;
        self.schedule(at, event)
            .expect("relative schedule is never in the past")
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|s| s.fire_at)
    }

    /// Pops the next event and advances the clock to its timestamp.
    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        let next = self.heap.pop()?;
        debug_assert!(next.fire_at >= self.now);
        self.now = next.fire_at;
        Some(next)
    }

    /// Advances the clock without popping (used to close a run at its end time).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_now_fires_next() {
        let mut q = EventQueue::new();
        q.schedule(0, "a").unwrap();
        assert_eq!(q.pop().unwrap().event, "a");
    }

    #[test]
    fn same_time_fires_in_schedule_order() {
        let mut q = EventQueue::new();
        q.schedule(10, "first").unwrap();
        q.schedule(5, "early").unwrap();
        q.schedule(10, "second").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|s| s.event)).collect();
        assert_eq!(order, vec!["early", "first", "second"]);
    }

    #[test]
    fn past_event_rejected() {
        let mut q = EventQueue::new();
        q.schedule(100, ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(99, ()),
            Err(ScheduleError::PastEvent {
                fire_at: 99,
                now: 100
            })
        );
        assert!(q.schedule(100, ()).is_ok());
    }
}
