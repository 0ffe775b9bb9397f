//! Neighbor schedule learning for the preamble-minimizing variant.

use std::collections::HashMap;

use crate::kernel::SimTime;
use crate::NodeId;

/// A neighbor's sampling schedule as seen on the learner's own clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    /// One sample instant of the neighbor, local time.
    pub next_sample: SimTime,
    /// Local time at which the entry was learned.
    pub learned_at: SimTime,
}

impl ScheduleEntry {
    /// Earliest predicted sample at or after `not_before` (local time).
    pub fn sample_at_or_after(&self, not_before: SimTime, tw: SimTime) -> SimTime {
        if self.next_sample >= not_before {
            return self.next_sample;
        }
        let k = (not_before - self.next_sample).ticks().div_ceil(tw.ticks());
        self.next_sample + tw * k
    }
}

/// Entries only ever come from received or overheard ACKs.
#[derive(Debug, Clone, Default)]
pub struct NeighborScheduleTable {
    entries: HashMap<NodeId, ScheduleEntry>,
}

impl NeighborScheduleTable {
    /// Records that `neighbor` samples `offset` after `local_now`.
    pub fn learn(&mut self, neighbor: NodeId, local_now: SimTime, offset: SimTime) {
        self.entries.insert(
            neighbor,
            ScheduleEntry {
                next_sample: local_now + offset,
                learned_at: local_now,
            },
        );
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&ScheduleEntry> {
        self.entries.get(&neighbor)
    }

    pub fn forget(&mut self, neighbor: NodeId) {
        self.entries.remove(&neighbor);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops entries old enough that the drift window already spans `tw`.
    pub fn expire(&mut self, local_now: SimTime, theta_ppb: u64, tw: SimTime) {
        self.entries
            .retain(|_, e| preamble_len(theta_ppb, local_now.saturating_sub(e.learned_at), tw) < tw);
    }
}

/// Clock tolerance in parts per billion, rounded.
pub fn theta_ppb(theta_ppm: f64) -> u64 {
    (theta_ppm * 1_000.0).round() as u64
}

/// `min(4 θ L, tw)`, rounded half up to a whole tick.
pub fn preamble_len(theta_ppb: u64, elapsed: SimTime, tw: SimTime) -> SimTime {
    let num = 4 * theta_ppb as u128 * elapsed.ticks() as u128;
    let tp = (num + 500_000_000) / 1_000_000_000;
    SimTime(tp.min(tw.ticks() as u128) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preamble_examples() {
        let tw = SimTime::from_millis(250);
        let ppb = theta_ppb(30.0);
        assert_eq!(preamble_len(ppb, SimTime::from_secs(100), tw), SimTime::from_millis(12));
        assert_eq!(preamble_len(ppb, SimTime::from_secs(100_000), tw), tw);
        assert_eq!(preamble_len(ppb, SimTime::ZERO, tw), SimTime::ZERO);
    }

    #[test]
    fn sample_prediction_steps_by_period() {
        let e = ScheduleEntry {
            next_sample: SimTime(1_000),
            learned_at: SimTime(0),
        };
        let tw = SimTime(500);
        assert_eq!(e.sample_at_or_after(SimTime(0), tw), SimTime(1_000));
        assert_eq!(e.sample_at_or_after(SimTime(1_000), tw), SimTime(1_000));
        assert_eq!(e.sample_at_or_after(SimTime(1_001), tw), SimTime(1_500));
        assert_eq!(e.sample_at_or_after(SimTime(2_600), tw), SimTime(3_000));
    }

    #[test]
    fn stale_entries_expire() {
        let mut t = NeighborScheduleTable::default();
        t.learn(3, SimTime::ZERO, SimTime(10));
        let tw = SimTime::from_millis(250);
        let ppb = theta_ppb(30.0);
        t.expire(SimTime::from_secs(1_000), ppb, tw);
        assert_eq!(t.len(), 1);
        // 4 x 30e-6 x L reaches 250 ms at L = 2083.3 s.
        t.expire(SimTime::from_secs(2_084), ppb, tw);
        assert!(t.is_empty());
    }
}
